"""Generalized normal (exponential power) distribution.

    f(x | mu, sigma, nu) = nu / (2 sigma Gamma(1/nu)) * exp(-|(x - mu) / sigma|^nu)

nu = 1 is the Laplace distribution, nu = 2 a normal with standard deviation
sigma / sqrt(2); small nu gives heavy tails.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterDomainError
from .special import log_gamma


@dataclass(frozen=True)
class GndParams:
    """Location ``mu``, scale ``sigma`` > 0 and shape ``nu`` > 0."""

    mu: float
    sigma: float
    nu: float

    def __post_init__(self):
        for name in ("mu", "sigma", "nu"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value!r}")
        if self.sigma <= 0:
            raise ParameterDomainError(f"sigma must be > 0, got {self.sigma!r}")
        if self.nu <= 0:
            raise ParameterDomainError(f"nu must be > 0, got {self.nu!r}")

    def to_dict(self):
        return {"mu": self.mu, "sigma": self.sigma, "nu": self.nu}


def log_norm_const(sigma, nu):
    """log(nu / (2 sigma Gamma(1/nu))), vectorized over components."""
    sigma = np.asarray(sigma, dtype=float)
    nu = np.asarray(nu, dtype=float)
    return np.log(nu) - math.log(2.0) - np.log(sigma) - log_gamma(1.0 / nu)


def log_pdf_array(x, mu, sigma, nu):
    """Broadcasting log-density on raw arrays, no validation.

    With ``x`` of shape (N, 1) and parameters of shape (K,) this yields the
    N x K matrix used throughout the fitter.
    """
    u = np.abs((x - mu) / sigma)
    with np.errstate(over="ignore"):
        return log_norm_const(sigma, nu) - u ** nu


def gnd_log_pdf(x, p: GndParams):
    """Log-density at ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    out = log_pdf_array(xa, p.mu, p.sigma, p.nu)
    return float(out) if out.ndim == 0 else out


def gnd_pdf(x, p: GndParams):
    return np.exp(gnd_log_pdf(x, p))


def gnd_sample(p: GndParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` variates as mu + sigma * S * T**(1/nu), T ~ Gamma(1/nu, 1), S = +-1."""
    if n < 1:
        raise ParameterDomainError(f"n must be >= 1, got {n}")
    t = rng.gamma(1.0 / p.nu, 1.0, size=n)
    sign = rng.integers(0, 2, size=n) * 2 - 1
    return p.mu + p.sigma * sign * t ** (1.0 / p.nu)


def gnd_abs_central_moment(p: GndParams, r: int) -> float:
    """E|X - mu|^r = sigma^r Gamma((r+1)/nu) / Gamma(1/nu)."""
    if r < 1 or int(r) != r:
        raise ParameterDomainError(f"r must be a positive integer, got {r!r}")
    return abs_central_moment(p.sigma, p.nu, r)


def abs_central_moment(sigma, nu, r):
    sigma = np.asarray(sigma, dtype=float)
    nu = np.asarray(nu, dtype=float)
    out = sigma ** r * np.exp(log_gamma((r + 1.0) / nu) - log_gamma(1.0 / nu))
    return float(out) if out.ndim == 0 else out


def gnd_central_moment(p: GndParams, r: int) -> float:
    """Signed central moment E(X - mu)^r; zero for odd r by symmetry."""
    if r % 2:
        if r < 1:
            raise ParameterDomainError(f"r must be a positive integer, got {r!r}")
        return 0.0
    return gnd_abs_central_moment(p, r)


def gnd_kurtosis(nu: float) -> float:
    """Non-excess kurtosis Gamma(5/nu) Gamma(1/nu) / Gamma(3/nu)^2."""
    return math.exp(log_gamma(5.0 / nu) + log_gamma(1.0 / nu) - 2.0 * log_gamma(3.0 / nu))
