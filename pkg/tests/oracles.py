"""Independent reference computations shared by the test modules."""

import mpmath as mp
import numpy as np

from cmgnd.ecm import mu_derivatives, nu_derivatives, sigma_derivatives, q_function
from cmgnd.mixture import MixtureModel, responsibilities, sample_mixture

KINDS = ("mu", "sigma", "nu")


def random_state(seed, n=300):
    """K=3 state drawn from the simulation design's parameter ranges."""
    rng = np.random.default_rng(seed)
    mu = np.array([0.0, 10.0, 20.0]) * rng.choice([1.0, 0.7, 0.5]) + rng.normal(0, 0.3, 3)
    sigma = rng.uniform(0.2, 3.0, 3)
    nu = rng.uniform(0.5, 4.0, 3)
    w = rng.dirichlet([4.0, 3.0, 3.0])
    m = MixtureModel.from_arrays(w, mu, sigma, nu)
    x = sample_mixture(m, n, rng)
    z = 0.5 * rng.dirichlet(np.ones(3), n) + 0.5 * responsibilities(x, m)
    block = [(0,), (1,), (2,), (1, 2)][rng.integers(4)]
    params = {"mu": mu, "sigma": sigma, "nu": nu}
    for k in KINDS:
        params[k] = params[k].copy()
        params[k][list(block)] = params[k][block[0]]
    return x, z, w, params, block


def block_q_mp(x, z, params, block, kind, value):
    """Block part of the Q-function with one kind set to ``value`` (30 digits)."""
    total = mp.mpf(0)
    for k in block:
        mu, s, v = (mp.mpf(float(params[p][k])) for p in KINDS)
        if kind == "mu":
            mu = value
        elif kind == "sigma":
            s = value
        else:
            v = value
        const = mp.log(v) - mp.log(2) - mp.log(s) - mp.loggamma(1 / v)
        for xn, zn in zip(x, z[:, k]):
            total += mp.mpf(float(zn)) * (const - (abs(mp.mpf(float(xn)) - mu) / s) ** v)
    return total


def fd_derivatives(x, z, params, block, kind, h=mp.mpf("1e-9")):
    """Central first and second differences of the block Q in the shared value."""
    with mp.workdps(30):
        r = mp.mpf(float(params[kind][block[0]]))
        qp, q0, qm = (block_q_mp(x, z, params, block, kind, r + d) for d in (h, 0, -h))
        return float((qp - qm) / (2 * h)), float((qp - 2 * q0 + qm) / h ** 2)


def coded_derivatives(x, z, params, block, kind):
    r = float(params[kind][block[0]])
    if kind == "mu":
        return mu_derivatives(block, x, z, r, params["sigma"], params["nu"])
    if kind == "sigma":
        return sigma_derivatives(block, x, z, r, params["mu"], params["nu"])
    return nu_derivatives(block, x, z, r, params["mu"], params["sigma"])


def q_fd_float(x, z, w, params, block, kind, h):
    """First central difference of the package's float Q-function."""
    def q(v):
        p = {k: a.copy() for k, a in params.items()}
        p[kind][list(block)] = v
        return q_function(x, z, w, p["mu"], p["sigma"], p["nu"])
    r = float(params[kind][block[0]])
    return (q(r + h) - q(r - h)) / (2 * h)


def gradient_check(seeds=range(20), n=300):
    """Worst relative error of (g, g') against the 30-digit oracle, per kind."""
    worst = {k: 0.0 for k in KINDS}
    for seed in seeds:
        x, z, w, params, block = random_state(seed, n)
        for kind in KINDS:
            g, gp = coded_derivatives(x, z, params, block, kind)
            fg, fgp = fd_derivatives(x, z, params, block, kind)
            err = max(abs(g - fg) / max(abs(fg), 1e-12 * abs(fgp)), abs(gp - fgp) / abs(fgp))
            worst[kind] = max(worst[kind], err)
    return worst


def mixture_mass(m, smin=-60.0, smax=80.0):
    """Quadrature of a mixture density over the real line.

    Each stretch next to a component mean is integrated in s = log|x - mean|,
    which resolves both sharp peaks and very heavy tails.
    """
    from scipy import integrate

    def q(f, a, b):
        return integrate.quad(f, a, b, limit=1000, epsabs=1e-13, epsrel=1e-11)[0]

    import math

    terms = [(w, mu, s, v, math.log(w * v / (2 * s)) - math.lgamma(1 / v))
             for w, mu, s, v in zip(m.w.tolist(), m.mu.tolist(), m.sigma.tolist(), m.nu.tolist())]

    def pdf(x):
        total = 0.0
        for _, mu, s, v, c in terms:
            lu = v * math.log(abs(x - mu) / s) if x != mu else -math.inf
            if lu < 7.0:  # beyond this exp(-u**v) underflows
                total += math.exp(c - math.exp(lu))
        return total

    def right(c):
        return lambda s: pdf(c + math.exp(s)) * math.exp(s)

    def left(c):
        return lambda s: pdf(c - math.exp(s)) * math.exp(s)

    pts = sorted(set(m.mu.tolist()))
    total = q(left(pts[0]), smin, smax) + q(right(pts[-1]), smin, smax)
    for a, b in zip(pts[:-1], pts[1:]):
        half = np.log((b - a) / 2)
        total += q(right(a), smin, half) + q(left(b), smin, half)
    return total
