import json
import math

import numpy as np
import pytest
from scipy import optimize

from cmgnd.ecm import (
    FitConfig,
    adaptive_step,
    ecm_fit,
    ecm_run,
    kmeans_init,
    mu_derivatives,
    q_function,
    read_config_file,
    sigma_derivatives,
    update_mu_block,
    update_nu_block,
    update_sigma_block,
    update_weights,
)
from cmgnd.errors import FitFailure, InputError
from cmgnd.gnd import GndParams, gnd_sample
from cmgnd.mixture import ConstraintSpec, MixtureModel, log_likelihood, responsibilities, sample_mixture
from cmgnd.simulation import true_model

from oracles import KINDS, coded_derivatives, fd_derivatives, q_fd_float, random_state


# --- weights ---------------------------------------------------------------

def test_weights_uniform_rows():
    np.testing.assert_allclose(update_weights(np.full((10, 4), 0.25)), [0.25] * 4, rtol=1e-15)


def test_weights_hard_assignment():
    np.testing.assert_allclose(update_weights([[1, 0], [1, 0], [0, 1]]), [2 / 3, 1 / 3], rtol=1e-15)


def test_weights_column_mean_oracle(rng):
    z = rng.dirichlet(np.ones(3), 100)
    ref = [sum(z[n, k] for n in range(100)) / 100 for k in range(3)]
    np.testing.assert_allclose(update_weights(z), ref, rtol=1e-14)


def test_weights_floor_keeps_positive():
    z = np.zeros((10, 2))
    z[:, 0] = 1.0
    diag = []
    w = update_weights(z, lambda kind, detail="": diag.append(kind))
    assert np.all(w > 0) and w.sum() == pytest.approx(1.0)
    assert diag == ["empty_component"]


# --- derivatives -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", KINDS)
def test_derivatives_match_finite_differences(seed, kind):
    x, z, w, params, block = random_state(seed, n=120)
    g, gp = coded_derivatives(x, z, params, block, kind)
    fg, fgp = fd_derivatives(x, z, params, block, kind)
    assert g == pytest.approx(fg, rel=1e-5, abs=1e-9 * abs(fgp))
    assert gp == pytest.approx(fgp, rel=1e-5)


@pytest.mark.parametrize("kind", ["sigma", "nu"])
def test_gradient_matches_float_q_function(kind):
    x, z, w, params, block = random_state(3, n=200)
    g, _ = coded_derivatives(x, z, params, block, kind)
    h = 1e-5 * float(params[kind][block[0]])
    assert g == pytest.approx(q_fd_float(x, z, w, params, block, kind, h), rel=1e-5)


def test_tie_contributes_zero():
    x = np.array([-1.0, 0.0, 1.0])
    z = np.ones((3, 1))
    g, gp = mu_derivatives((0,), x, z, 0.0, [1.0], [0.5])
    assert math.isfinite(g) and math.isfinite(gp)
    assert g == 0.0


# --- location --------------------------------------------------------------

def test_mu_stationary_for_symmetric_data():
    x = np.array([-2.0, -0.5, 0.5, 2.0]) + 3.0
    z = np.ones((4, 1))
    assert update_mu_block((0,), x, z, [3.0], [1.0], [2.0]) == pytest.approx(3.0, abs=1e-14)


def test_mu_one_step_weighted_mean(rng):
    x = rng.normal(2, 1, 50)
    z = rng.uniform(0.1, 1, (50, 1))
    target = float(np.sum(z[:, 0] * x) / z.sum())
    new = update_mu_block((0,), x, z, [-5.0], [1.3], [2.0])
    assert new == pytest.approx(target, rel=1e-12)


def test_mu_block_step_increases_q(rng):
    x, z, w, params, block = random_state(5)
    before = q_function(x, z, w, params["mu"], params["sigma"], params["nu"])
    mu = params["mu"].copy()
    mu[list(block)] = update_mu_block(block, x, z, mu, params["sigma"], params["nu"])
    assert q_function(x, z, w, mu, params["sigma"], params["nu"]) >= before


# --- scale -----------------------------------------------------------------

def test_sigma_stationary_point(rng):
    x = rng.normal(0, 1, 200)
    z = np.ones((200, 1))
    s_star = math.sqrt(2 * np.mean(x ** 2))
    g, _ = sigma_derivatives((0,), x, z, s_star, [0.0], [2.0])
    assert abs(g) < 1e-10
    assert update_sigma_block((0,), x, z, [0.0], [s_star], [2.0]) == pytest.approx(s_star, abs=1e-12)


def test_sigma_block_matches_golden_section():
    truth = MixtureModel.from_arrays([0.5, 0.5], [0.0, 8.0], [1.5, 1.5], [1.6, 1.6])
    x = sample_mixture(truth, 2000, np.random.default_rng(21))
    z = responsibilities(x, truth)
    mu, nu = truth.mu, truth.nu
    sigma = np.array([0.7, 0.7])
    for _ in range(200):
        sigma[:] = update_sigma_block((0, 1), x, z, mu, sigma, nu)

    def neg_q(s):
        return -q_function(x, z, truth.w, mu, [s, s], nu)

    ref = optimize.golden(neg_q, brack=(0.5, 1.5, 4.0), tol=1e-12)
    assert sigma[0] == sigma[1]
    assert abs(sigma[0] - ref) < 1e-4


def test_sigma_floor():
    x = np.array([0.0, 1e-12, -1e-12, 0.0, 0.0])
    z = np.ones((5, 1))
    s = update_sigma_block((0,), x, z, [0.0], [1e-6], [2.0], sigma_min=1e-6)
    assert s >= 1e-6


# --- shape -----------------------------------------------------------------

def test_adaptive_step_values():
    assert adaptive_step(1.0) == pytest.approx(0.36787944117144233, rel=1e-15)
    assert adaptive_step(2.0) == pytest.approx(0.1353352832366127, rel=1e-15)


def test_nu_consistency_at_truth():
    x = gnd_sample(GndParams(0.0, 1.0, 1.6), 10 ** 5, np.random.default_rng(8))
    z = np.ones((x.size, 1))
    nu = np.array([2.0])
    for _ in range(300):
        nu[0] = update_nu_block((0,), x, z, [0.0], [1.0], nu)
    assert abs(nu[0] - 1.6) < 0.05


def test_nu_skip_rule():
    x = gnd_sample(GndParams(0.0, 1.0, 1.6), 5000, np.random.default_rng(8))
    z = np.ones((x.size, 1))
    kinds = []
    cfg = FitConfig(nu_grad_skip_threshold=1e12)
    v = update_nu_block((0,), x, z, [0.0], [1.0], [3.0], cfg, lambda k, d="": kinds.append(k))
    assert v == 3.0 and kinds == ["nu_small_gradient"]


def test_nu_clamped():
    cfg = FitConfig(nu_max=2.5, use_adaptive_step=False)
    x = np.random.default_rng(0).uniform(-1, 1, 5000)  # flat data pushes the shape upward
    z = np.ones((x.size, 1))
    v = np.array([2.4])
    for _ in range(50):
        v[0] = update_nu_block((0,), x, z, [0.0], [1.0], v, cfg)
    assert 0.1 <= v[0] <= 2.5


# --- initialisation --------------------------------------------------------

def test_kmeans_separated_clouds(rng):
    x = np.concatenate([rng.normal(0, 0.5, 100), rng.normal(20, 0.5, 100)])
    m = kmeans_init(x, 2, np.random.default_rng(0))
    assert -2 < m.mu[0] < 2 and 18 < m.mu[1] < 22
    np.testing.assert_array_equal(m.nu, [2.0, 2.0])


def test_kmeans_single_component(rng):
    x = rng.normal(3, 2, 100)
    m = kmeans_init(x, 1, np.random.default_rng(0))
    assert m.mu[0] == pytest.approx(x.mean(), rel=1e-14)
    assert m.sigma[0] == pytest.approx(x.std(ddof=1), rel=1e-14)
    assert m.weights == (1.0,) and m.nu[0] == 2.0


def test_kmeans_deterministic(rng):
    x = sample_mixture(true_model("UUU", "high"), 500, rng)
    a = kmeans_init(x, 3, np.random.default_rng(4), ConstraintSpec.from_code("UCC", 3, (1, 2)))
    b = kmeans_init(x, 3, np.random.default_rng(4), ConstraintSpec.from_code("UCC", 3, (1, 2)))
    assert a == b
    assert a.sigma[1] == a.sigma[2]


def test_kmeans_needs_distinct_values():
    with pytest.raises(InputError):
        kmeans_init(np.ones(20), 2, np.random.default_rng(0))


# --- full fits -------------------------------------------------------------

def test_single_component_recovery():
    x = gnd_sample(GndParams(1.0, 2.0, 1.3), 10 ** 4, np.random.default_rng(31))
    res = ecm_fit(x, 1, cfg=FitConfig(loglik_rel_tol=1e-10, max_iters=2000))
    m = res.model
    assert abs(m.mu[0] - 1.0) < 0.05
    assert abs(m.sigma[0] - 2.0) < 0.1
    assert abs(m.nu[0] - 1.3) < 0.08
    # profile grid over the shape: the fitted shape beats its neighbours
    grid = m.nu[0] + np.array([-0.05, 0.05])
    for v in grid:
        alt = ecm_fit(x, 1, cfg=FitConfig(fixed_nu=float(v), loglik_rel_tol=1e-12, max_iters=2000))
        assert alt.log_lik <= res.log_lik + 1e-6


def test_constraints_exact_every_iteration():
    sc_model = true_model("UCU", "low")
    x = sample_mixture(sc_model, 1000, np.random.default_rng(2))
    spec = ConstraintSpec.from_code("UCU", 3, (1, 2))
    init = kmeans_init(x, 3, np.random.default_rng(0), spec)
    cfg = FitConfig(max_iters=1)
    m = init
    for _ in range(30):
        m = ecm_run(x, m, cfg).model  # MixtureModel construction re-checks bit equality
        assert m.sigma[1] == m.sigma[2]
    res = ecm_fit(x, 3, spec)
    assert res.model.sigma[1] == res.model.sigma[2]


def test_loglik_trace_monotone_and_consistent():
    x = sample_mixture(true_model("UUU", "medium"), 800, np.random.default_rng(3))
    res = ecm_fit(x, 3, ConstraintSpec.unconstrained(3))
    diffs = np.diff(res.loglik_trace)
    assert np.all(diffs >= -1e-8)
    assert res.log_lik == pytest.approx(log_likelihood(x, res.model), rel=1e-12)
    assert res.loglik_trace[-1] == res.log_lik
    assert res.n_params == 11
    np.testing.assert_allclose(res.responsibilities.sum(axis=1), 1.0)


def test_nesting_normal_em_fixed_point():
    truth = MixtureModel.from_arrays([0.4, 0.6], [0.0, 4.0], [1.0, 1.4], [2.0, 2.0])
    x = sample_mixture(truth, 1500, np.random.default_rng(17))
    cfg = FitConfig(fixed_nu=2.0, max_iters=1)
    res = ecm_fit(x, 2, cfg=FitConfig(fixed_nu=2.0))
    for _ in range(2000):
        prev, res = res, ecm_run(x, res.model, cfg)
        if res.model == prev.model:
            break
    z = res.responsibilities
    np.testing.assert_allclose(res.model.w, z.mean(axis=0), atol=1e-8)
    np.testing.assert_allclose(res.model.mu, (z * x[:, None]).sum(0) / z.sum(0), atol=1e-8)
    assert res.n_params == 5


def test_permutation_invariance_of_fit():
    x = sample_mixture(true_model("UCC", "medium"), 600, np.random.default_rng(9))
    spec = ConstraintSpec.from_code("UCC", 3, (1, 2))
    init = kmeans_init(x, 3, np.random.default_rng(1), spec)
    cfg = FitConfig(loglik_rel_tol=1e-13, max_iters=3000)
    base = ecm_fit(x, 3, spec, cfg, inits=[init])
    for perm in [(2, 0, 1), (1, 2, 0)]:
        pinit = init.permuted(perm)
        other = ecm_fit(x, 3, pinit.constraints, cfg, inits=[pinit])
        assert other.log_lik == pytest.approx(base.log_lik, abs=1e-8)


def test_multistart_deterministic():
    x = sample_mixture(true_model("UUU", "high"), 400, np.random.default_rng(6))
    a = ecm_fit(x, 3, cfg=FitConfig(seed=5))
    b = ecm_fit(x, 3, cfg=FitConfig(seed=5))
    assert a.model == b.model and a.log_lik == b.log_lik


def test_fit_input_errors():
    with pytest.raises(InputError):
        ecm_fit(np.arange(8.0), 2)
    with pytest.raises(InputError):
        ecm_fit(np.r_[np.zeros(20), [np.inf]], 2)
    with pytest.raises(InputError):
        ecm_fit(np.arange(50.0), 2, ConstraintSpec.unconstrained(3))


def test_fit_failure_carries_diagnostics():
    bad = MixtureModel.from_arrays([0.5, 0.5], [0.0, 1.0], [1e-3, 1e-3], [20.0, 20.0])
    with pytest.raises(FitFailure) as exc:
        ecm_fit(np.r_[np.linspace(-1e20, 1e20, 30)], 2, inits=[bad])
    assert isinstance(exc.value.diagnostics, list)


# --- configuration ---------------------------------------------------------

def test_config_files(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"fit": {"max_iters": 7, "seed": 3}}))
    (tmp_path / "b.toml").write_text("n_starts = 2\nfixed_nu = 2.0\n")
    assert FitConfig.from_file(tmp_path / "a.json").max_iters == 7
    cfg = FitConfig.from_file(tmp_path / "b.toml")
    assert cfg.n_starts == 2 and cfg.fixed_nu == 2.0 and cfg.max_iters == 500
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    with pytest.raises(InputError):
        FitConfig.from_file(tmp_path / "c.json")
    (tmp_path / "d.json").write_text("{not json")
    with pytest.raises(InputError):
        read_config_file(tmp_path / "d.json")
    with pytest.raises(InputError):
        FitConfig(nu_min=5, nu_max=1)
