"""Constrained ECM estimation with Newton-Raphson conditional updates.

One cycle is: E-step, weight update, one Newton-Raphson step per location
block, per scale block, then per shape block, each using the freshest values.
Every Newton step is safeguarded: a step that leaves the parameter domain or
lowers the block's part of the expected complete-data log-likelihood (the
Q-function) is halved up to ten times and otherwise skipped, so the observed
log-likelihood cannot decrease (generalized EM).
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import FitFailure, InputError
from .mixture import (
    ConstraintSpec,
    MixtureModel,
    bic,
    e_step,
    free_parameter_count,
)
from .special import digamma, log_gamma, trigamma

log = logging.getLogger(__name__)

MAX_HALVINGS = 10
WEIGHT_FLOOR = 1e-10
CURVATURE_GUARD = 1e-12


def read_config_file(path) -> dict:
    """Parse a JSON or TOML (by ``.toml`` suffix) configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            return tomllib.loads(text)
        return json.loads(text)
    except ValueError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc


@dataclass
class FitConfig:
    max_iters: int = 500
    loglik_rel_tol: float = 1e-6
    nu_grad_skip_threshold: float = 1e-3
    nu_min: float = 0.1
    nu_max: float = 20.0
    sigma_min: float = 1e-6
    n_starts: int = 5
    use_adaptive_step: bool = True
    seed: int = 0
    # hold every shape at this value (2.0 gives constrained normal mixtures)
    fixed_nu: Optional[float] = None
    # majorize-minimize location step when the Newton step is rejected
    mu_mm_fallback: bool = True

    def __post_init__(self):
        if self.max_iters < 1 or self.n_starts < 1:
            raise InputError("max_iters and n_starts must be >= 1")
        for name in ("loglik_rel_tol", "nu_grad_skip_threshold", "nu_min", "nu_max", "sigma_min"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0")
        if not self.nu_min < self.nu_max:
            raise InputError("nu_min must be < nu_max")
        if self.fixed_nu is not None and not self.fixed_nu > 0:
            raise InputError("fixed_nu must be > 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown FitConfig fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "FitConfig":
        """Read a JSON or TOML file; every field is optional.

        Fields may sit at top level or under a ``fit`` table.
        """
        doc = read_config_file(path)
        return cls.from_dict(doc.get("fit", doc))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    iteration: int
    detail: str = ""


@dataclass
class FitResult:
    model: MixtureModel
    log_lik: float
    bic: float
    n_params: int
    iterations: int
    loglik_trace: np.ndarray
    responsibilities: np.ndarray
    converged: bool
    diagnostics: List[Diagnostic] = field(default_factory=list)
    start: int = 0

    def diagnostic_counts(self) -> dict:
        counts = {}
        for d in self.diagnostics:
            counts[d.kind] = counts.get(d.kind, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "log_lik": self.log_lik,
            "bic": self.bic,
            "n_params": self.n_params,
            "n_obs": int(self.responsibilities.shape[0]),
            "iterations": self.iterations,
            "converged": self.converged,
            "start": self.start,
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "diagnostics": self.diagnostic_counts(),
        }


class _Diag:
    """Collects diagnostics for one run; ``it`` is the current cycle."""

    def __init__(self):
        self.items = []
        self.it = 0

    def __call__(self, kind, detail=""):
        self.items.append(Diagnostic(kind, self.it, detail))


def _note(diag, kind, detail=""):
    if diag is not None:
        diag(kind, detail)


def _idx(block) -> np.ndarray:
    return np.asarray(block, dtype=int)


# ---------------------------------------------------------------------------
# Q-function and its block derivatives
# ---------------------------------------------------------------------------

def q_function(data, z, weights, mu, sigma, nu) -> float:
    """Expected complete-data log-likelihood sum_n sum_k z_nk log(pi_k f_k(x_n))."""
    x = np.asarray(data, dtype=float)[:, None]
    mu, sigma, nu = (np.asarray(a, dtype=float) for a in (mu, sigma, nu))
    logf = (np.log(nu) - math.log(2.0) - np.log(sigma) - log_gamma(1.0 / nu)
            - np.abs((x - mu) / sigma) ** nu)
    return float(np.sum(z * (np.log(weights) + logf)))


def _pow_masked(a, e):
    """a**e with a == 0 entries mapped to 0 (tie convention)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a ** e
    return np.where(a > 0, out, 0.0)


def mu_derivatives(block, data, z, mu_r, sigma, nu):
    """g and g' of the Q-function in a shared location ``mu_r`` over ``block``."""
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    d = x[:, None] - mu_r
    a = np.abs(d)
    nu_b = np.asarray(nu, dtype=float)[ks]
    coef = nu_b / np.asarray(sigma, dtype=float)[ks] ** nu_b
    zb = z[:, ks]
    g = np.sum(coef * np.sum(zb * np.sign(d) * _pow_masked(a, nu_b - 1.0), axis=0))
    gp = -np.sum(coef * (nu_b - 1.0) * np.sum(zb * _pow_masked(a, nu_b - 2.0), axis=0))
    return float(g), float(gp)


def _mu_block_q(x, zb, mu_r, sigma_b, nu_b):
    return -float(np.sum(zb * (np.abs(x[:, None] - mu_r) / sigma_b) ** nu_b))


def sigma_derivatives(block, data, z, sigma_r, mu, nu):
    """g and g' of the Q-function in a shared scale ``sigma_r`` over ``block``."""
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    nu_b = np.asarray(nu, dtype=float)[ks]
    zb = z[:, ks]
    A = np.sum(zb * np.abs(x[:, None] - np.asarray(mu, dtype=float)[ks]) ** nu_b, axis=0)
    Z = zb.sum(axis=0)
    return _sigma_g(sigma_r, A, Z, nu_b)


def _sigma_g(s, A, Z, nu_b):
    g = np.sum(-Z / s + nu_b * s ** (-nu_b - 1.0) * A)
    gp = np.sum(Z / s ** 2 - nu_b * (nu_b + 1.0) * s ** (-nu_b - 2.0) * A)
    return float(g), float(gp)


def _sigma_block_q(s, A, Z, nu_b):
    return float(np.sum(-Z * math.log(s) - A * s ** (-nu_b)))


def _log_abs_std(x, mu_b, sigma_b):
    u = np.abs(x[:, None] - mu_b) / sigma_b
    with np.errstate(divide="ignore"):
        L = np.log(u)
    return L, u > 0


def nu_derivatives(block, data, z, nu_r, mu, sigma):
    """g and g' of the Q-function in a shared shape ``nu_r`` over ``block``."""
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    L, pos = _log_abs_std(x, np.asarray(mu, dtype=float)[ks], np.asarray(sigma, dtype=float)[ks])
    zb = z[:, ks]
    return _nu_g(nu_r, L, pos, zb, zb.sum())


def _nu_g(v, L, pos, zb, Zsum):
    y = 1.0 / v
    psi = digamma(y)
    tri = trigamma(y)
    Lz = np.where(pos, L, 0.0)
    uv = np.where(pos, np.exp(v * Lz), 0.0)
    w = zb * uv
    g = Zsum * y * (y * psi + 1.0) - float(np.sum(w * Lz))
    gp = -Zsum * y * y * (1.0 + 2.0 * y * psi + y * y * tri) - float(np.sum(w * Lz * Lz))
    return float(g), float(gp)


def _nu_block_q(v, L, pos, zb, Zsum):
    uv = np.where(pos, np.exp(v * np.where(pos, L, 0.0)), 0.0)
    return Zsum * (math.log(v) - log_gamma(1.0 / v)) - float(np.sum(zb * uv))


def adaptive_step(nu: float) -> float:
    """Damping factor exp(-nu) applied to the shape Newton step."""
    return math.exp(-nu)


# ---------------------------------------------------------------------------
# conditional maximisation steps
# ---------------------------------------------------------------------------

def update_weights(z, diag=None) -> np.ndarray:
    """Column means of the responsibilities, floored away from zero."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    col = z.sum(axis=0)
    if np.any(col < WEIGHT_FLOOR * n):
        _note(diag, "empty_component", f"columns {np.flatnonzero(col < WEIGHT_FLOOR * n).tolist()}")
        w = np.maximum(col / n, WEIGHT_FLOOR)
        return w / w.sum()
    return col / n


def _safeguarded_step(name, current, step, q, valid, diag):
    """Try current - t*step for t = 1, 1/2, ..., 2**-10; keep the first that
    is valid and does not lower q. Returns the accepted value or current."""
    q0 = q(current)
    t = 1.0
    for attempt in range(MAX_HALVINGS + 1):
        cand = current - t * step
        if math.isfinite(cand) and valid(cand):
            qc = q(cand)
            if math.isfinite(qc) and qc >= q0:
                if attempt:
                    _note(diag, "step_halved", f"{name} x{attempt}")
                return cand
        t *= 0.5
    _note(diag, "step_skipped", name)
    return current


def update_mu_block(block, data, z, mu, sigma, nu, diag=None, mm_fallback=True) -> float:
    """One safeguarded Newton-Raphson step for the location shared by ``block``.

    When the Newton step is rejected (typical for shapes below 1, where Q is
    not concave in the location) and ``mm_fallback`` is set, a
    majorize-minimize weighted-mean step is tried instead.
    """
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    mu_r = float(np.asarray(mu, dtype=float)[ks[0]])
    g, gp = mu_derivatives(block, x, z, mu_r, sigma, nu)
    name = f"mu{(ks + 1).tolist()}"
    if not (math.isfinite(g) and math.isfinite(gp)) or abs(gp) < CURVATURE_GUARD:
        _note(diag, "mu_skipped", name)
        return mu_r
    zb = z[:, ks]
    sigma_b = np.asarray(sigma, dtype=float)[ks]
    nu_b = np.asarray(nu, dtype=float)[ks]

    def q(m):
        return _mu_block_q(x, zb, m, sigma_b, nu_b)

    new = _safeguarded_step(name, mu_r, g / gp, q, lambda m: True, diag if not mm_fallback else None)
    if new == mu_r and mm_fallback:
        new = _mu_mm_step(x, zb, mu_r, sigma_b, nu_b, q)
        _note(diag, "mu_mm_fallback" if new != mu_r else "step_skipped", name)
    return new


def _mu_mm_step(x, zb, mu_r, sigma_b, nu_b, q):
    """Weighted-mean step from the quadratic majorizer of |x - mu|^nu (nu < 2).

    Returned only if it does not lower the block Q.
    """
    a = np.abs(x[:, None] - mu_r)
    wts = zb * (nu_b / sigma_b ** nu_b) * _pow_masked(a, nu_b - 2.0)
    total = wts.sum()
    if not (math.isfinite(total) and total > 0):
        return mu_r
    cand = float(np.sum(wts.sum(axis=1) * x) / total)
    return cand if math.isfinite(cand) and q(cand) >= q(mu_r) else mu_r


def update_sigma_block(block, data, z, mu, sigma, nu, sigma_min=1e-6, diag=None) -> float:
    """One safeguarded Newton-Raphson step for the scale shared by ``block``.

    ``mu`` must already hold this cycle's location estimates.
    """
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    s_r = float(np.asarray(sigma, dtype=float)[ks[0]])
    nu_b = np.asarray(nu, dtype=float)[ks]
    zb = z[:, ks]
    A = np.sum(zb * np.abs(x[:, None] - np.asarray(mu, dtype=float)[ks]) ** nu_b, axis=0)
    Z = zb.sum(axis=0)
    g, gp = _sigma_g(s_r, A, Z, nu_b)
    name = f"sigma{(ks + 1).tolist()}"
    if not (math.isfinite(g) and math.isfinite(gp)) or abs(gp) < CURVATURE_GUARD:
        _note(diag, "sigma_skipped", name)
        return s_r

    def q(s):
        return _sigma_block_q(max(s, sigma_min), A, Z, nu_b)

    new = _safeguarded_step(name, s_r, g / gp, q, lambda s: s > 0, diag)
    if new < sigma_min:
        _note(diag, "sigma_clamped", name)
        new = sigma_min
    return new


def update_nu_block(block, data, z, mu, sigma, nu, cfg: FitConfig = None, diag=None) -> float:
    """One damped, safeguarded Newton-Raphson step for the shape shared by ``block``.

    Skipped when |g| is below ``cfg.nu_grad_skip_threshold``; the damping
    factor is exp(-nu) unless ``cfg.use_adaptive_step`` is off.
    """
    cfg = cfg or FitConfig()
    ks = _idx(block)
    x = np.asarray(data, dtype=float)
    v = float(np.asarray(nu, dtype=float)[ks[0]])
    L, pos = _log_abs_std(x, np.asarray(mu, dtype=float)[ks], np.asarray(sigma, dtype=float)[ks])
    zb = z[:, ks]
    Zsum = float(zb.sum())
    g, gp = _nu_g(v, L, pos, zb, Zsum)
    name = f"nu{(ks + 1).tolist()}"
    if not (math.isfinite(g) and math.isfinite(gp)) or abs(gp) < CURVATURE_GUARD:
        _note(diag, "nu_skipped", name)
        return v
    if abs(g) < cfg.nu_grad_skip_threshold:
        _note(diag, "nu_small_gradient", name)
        return v
    alpha = adaptive_step(v) if cfg.use_adaptive_step else 1.0

    def clamp(c):
        return min(max(c, cfg.nu_min), cfg.nu_max)

    def q(c):
        return _nu_block_q(clamp(c), L, pos, zb, Zsum)

    new = _safeguarded_step(name, v, alpha * g / gp, q, lambda c: c > 0, diag)
    if new != clamp(new):
        _note(diag, "nu_clamped", name)
        new = clamp(new)
    return new


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def _kmeanspp_centers(x, K, rng):
    centers = [x[rng.integers(x.size)]]
    for _ in range(1, K):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.size)])
        else:
            centers.append(x[rng.choice(x.size, p=d2 / total)])
    return np.array(centers, dtype=float)


def _lloyd(x, centers, max_iter=100):
    labels = None
    for _ in range(max_iter):
        new = np.argmin(np.abs(x[:, None] - centers), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(centers.size):
            members = x[labels == k]
            if members.size:
                centers[k] = members.mean()
    return labels, centers


def _split_largest(x, labels, K):
    counts = np.bincount(labels, minlength=K)
    for k in np.flatnonzero(counts == 0):
        big = int(np.argmax(np.bincount(labels, minlength=K)))
        idx = np.flatnonzero(labels == big)
        vals = x[idx]
        upper = idx[vals > np.median(vals)]
        if upper.size == 0:
            upper = idx[idx.size // 2:]
        labels[upper] = k
    return labels


def kmeans_labels(x, K, rng, max_reseeds=10):
    """1-D k-means (k-means++ seeding, Lloyd iterations) returning labels."""
    for _ in range(max_reseeds + 1):
        labels, _ = _lloyd(x, _kmeanspp_centers(x, K, rng))
        if np.all(np.bincount(labels, minlength=K) > 0):
            return labels
    return _split_largest(x, labels, K)


def _apply_blocks(values, blocks):
    out = np.array(values, dtype=float)
    for b in blocks:
        out[list(b)] = np.mean(out[list(b)])
    return out


def kmeans_init(data, K: int, rng: np.random.Generator, constraints: Optional[ConstraintSpec] = None,
                sigma_min: float = 1e-6, nu0: float = 2.0) -> MixtureModel:
    """Starting model from a k-means partition of the data.

    Cluster means, standard deviations and proportions seed mu, sigma and
    the weights; every shape starts at ``nu0``. Constrained blocks get the
    within-block average so the start satisfies ``constraints``. Components
    left with equal location and scale get spread shapes (see
    :func:`_spread_identical`).
    """
    x = np.asarray(data, dtype=float).ravel()
    if np.unique(x).size < K:
        raise InputError(f"need at least {K} distinct values to initialise {K} components")
    constraints = constraints or ConstraintSpec.unconstrained(K)
    labels = kmeans_labels(x, K, rng)
    # relabel clusters by ascending mean so designated blocks are reproducible
    order = np.argsort([x[labels == k].mean() for k in range(K)], kind="stable")
    labels = np.argsort(order)[labels]
    mu = np.empty(K)
    sd = np.empty(K)
    w = np.empty(K)
    for k in range(K):
        members = x[labels == k]
        mu[k] = members.mean()
        sd[k] = members.std(ddof=1) if members.size > 1 else 0.0
        w[k] = members.size / x.size
    sd = np.maximum(sd, sigma_min * 10)
    mu = _apply_blocks(mu, constraints.mu_blocks)
    sd = _apply_blocks(sd, constraints.sigma_blocks)
    nu = _spread_identical(mu, sd, np.full(K, float(nu0)))
    nu = _apply_blocks(nu, constraints.nu_blocks)
    return MixtureModel.from_arrays(w / w.sum(), mu, sd, nu, constraints)


def _spread_identical(mu, sd, nu):
    """Give components with equal (mu, sigma) distinct starting shapes.

    Identical components receive identical responsibilities, so the updates
    would keep them identical forever; shapes nu0 * 2**t, t evenly spaced in
    [-1, 1], break the tie.
    """
    groups = {}
    for k, key in enumerate(zip(mu.tolist(), sd.tolist())):
        groups.setdefault(key, []).append(k)
    for members in groups.values():
        if len(members) > 1:
            nu[members] = nu[members] * 2.0 ** np.linspace(-1.0, 1.0, len(members))
    return nu


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _check_fit_input(data, K):
    x = np.asarray(data, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise InputError("data contains non-finite values")
    if x.size <= 4 * K:
        raise InputError(f"need more than 4K = {4 * K} observations, got {x.size}")
    if np.unique(x).size < K:
        raise InputError(f"need at least {K} distinct values")
    return x


def ecm_run(data, init: MixtureModel, cfg: FitConfig = None, start: int = 0) -> FitResult:
    """Run the ECM iterations from a given starting model."""
    cfg = cfg or FitConfig()
    x = np.asarray(data, dtype=float).ravel()
    spec = init.constraints
    w, mu, sigma, nu = init.w, init.mu, init.sigma, init.nu
    if cfg.fixed_nu is not None:
        nu = np.full(init.K, float(cfg.fixed_nu))
    diag = _Diag()

    z, ll, bad = e_step(x, w, mu, sigma, nu)
    if np.any(bad):
        diag("underflow_rows", str(int(bad.sum())))
    if not math.isfinite(ll):
        raise FitFailure("non-finite log-likelihood at start", diag.items)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        diag.it = it
        w = update_weights(z, diag)
        for b in spec.mu_blocks:
            mu[list(b)] = update_mu_block(b, x, z, mu, sigma, nu, diag, cfg.mu_mm_fallback)
        for b in spec.sigma_blocks:
            sigma[list(b)] = update_sigma_block(b, x, z, mu, sigma, nu, cfg.sigma_min, diag)
        if cfg.fixed_nu is None:
            for b in spec.nu_blocks:
                nu[list(b)] = update_nu_block(b, x, z, mu, sigma, nu, cfg, diag)
        z, ll_new, bad = e_step(x, w, mu, sigma, nu)
        if np.any(bad):
            diag("underflow_rows", str(int(bad.sum())))
        if not math.isfinite(ll_new):
            raise FitFailure(f"non-finite log-likelihood at iteration {it}", diag.items)
        trace.append(ll_new)
        if ll_new < ll - 1e-8:
            diag("loglik_decrease", f"{ll_new - ll:.3e}")
        if abs(ll_new - ll) < cfg.loglik_rel_tol * abs(ll):
            ll = ll_new
            converged = True
            break
        ll = ll_new

    model = MixtureModel.from_arrays(w, mu, sigma, nu, spec)
    p = free_parameter_count(spec.K, spec, fixed_nu=cfg.fixed_nu is not None)
    return FitResult(
        model=model,
        log_lik=ll,
        bic=bic(ll, p, x.size),
        n_params=p,
        iterations=it,
        loglik_trace=np.array(trace),
        responsibilities=z,
        converged=converged,
        diagnostics=diag.items,
        start=start,
    )


def ecm_fit(data, K: int, c: Optional[ConstraintSpec] = None, cfg: FitConfig = None,
            inits: Optional[Sequence[MixtureModel]] = None) -> FitResult:
    """Maximum-likelihood fit of a constrained GND mixture.

    Runs ``cfg.n_starts`` k-means starts (start i seeded with cfg.seed + i)
    unless explicit ``inits`` are given, and returns the run with the highest
    final log-likelihood (ties: fewer iterations, then lower start index).
    """
    cfg = cfg or FitConfig()
    c = c or ConstraintSpec.unconstrained(K)
    if c.K != K:
        raise InputError(f"constraint spec is for K={c.K}, not K={K}")
    x = _check_fit_input(data, K)
    nu0 = 2.0 if cfg.fixed_nu is None else cfg.fixed_nu
    best = None
    failures = []
    seen = set()
    n = len(inits) if inits is not None else cfg.n_starts
    for i in range(n):
        try:
            if inits is not None:
                init = inits[i]
            else:
                rng = np.random.default_rng(cfg.seed + i)
                init = kmeans_init(x, K, rng, c, cfg.sigma_min, nu0)
            # a repeated start reproduces an earlier run exactly
            key = (init.weights, init.components)
            if key in seen:
                continue
            seen.add(key)
            res = ecm_run(x, init, cfg, start=i)
        except FitFailure as exc:
            log.debug("start %d failed: %s", i, exc)
            failures.extend(exc.diagnostics)
            failures.append(Diagnostic("start_failed", 0, f"start {i}: {exc}"))
            continue
        if best is None or (res.log_lik, -res.iterations) > (best.log_lik, -best.iterations):
            best = res
    if best is None:
        raise FitFailure("all starts failed", failures)
    best.diagnostics = failures + best.diagnostics
    return best
