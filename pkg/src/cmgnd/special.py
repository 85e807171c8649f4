"""Log-gamma, digamma and trigamma for positive real arguments.

Log-gamma uses the Lanczos approximation (g=7, 9 terms); digamma and
trigamma shift the argument upward with the recurrence relations and then
apply the asymptotic (Bernoulli) series. All three accept scalars or
numpy arrays and return the same shape.
"""

import math

import numpy as np

from .errors import ParameterDomainError

_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# recurrence shifts until x >= this before the asymptotic series
_ASYMPTOTIC_FROM = 10.0


def _as_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ParameterDomainError(f"{name} requires finite x > 0, got {x!r}")
    return arr


def _finish(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _scalar(x):
    """Return x as a float when it is a plain scalar, else None."""
    if isinstance(x, (float, int)) and not isinstance(x, bool):
        return float(x)
    if isinstance(x, np.floating):
        return float(x)
    return None


def _check_scalar(x, name):
    if not (x > 0 and math.isfinite(x)):
        raise ParameterDomainError(f"{name} requires finite x > 0, got {x!r}")


def _lgamma_scalar(x):
    shift = 0.0
    if x < 0.5:
        shift = math.log(x)
        x += 1.0
    xm = x - 1.0
    a = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        a += _LANCZOS_COEF[i] / (xm + i)
    t = xm + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (xm + 0.5) * math.log(t) - t + math.log(a) - shift


def _digamma_scalar(y):
    acc = 0.0
    while y < _ASYMPTOTIC_FROM:
        acc -= 1.0 / y
        y += 1.0
    r2 = 1.0 / (y * y)
    series = r2 * (1.0 / 12 - r2 * (1.0 / 120 - r2 * (1.0 / 252 - r2 * (1.0 / 240 - r2 * (1.0 / 132)))))
    return math.log(y) - 0.5 / y - series + acc


def _trigamma_scalar(y):
    acc = 0.0
    while y < _ASYMPTOTIC_FROM:
        acc += 1.0 / (y * y)
        y += 1.0
    r = 1.0 / y
    r2 = r * r
    return acc + r + 0.5 * r2 + r * r2 * (
        1.0 / 6 - r2 * (1.0 / 30 - r2 * (1.0 / 42 - r2 * (1.0 / 30 - r2 * (5.0 / 66))))
    )


def _lanczos_lgamma(x):
    # valid for x >= 0.5
    xm = x - 1.0
    a = np.full_like(xm, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        a = a + _LANCZOS_COEF[i] / (xm + i)
    t = xm + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (xm + 0.5) * np.log(t) - t + np.log(a)


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    xs = _scalar(x)
    if xs is not None:
        _check_scalar(xs, "log_gamma")
        return _lgamma_scalar(xs)
    arr = _as_positive(x, "log_gamma")
    if arr.size <= 16:
        out = np.array([_lgamma_scalar(v) for v in arr.ravel()]).reshape(arr.shape)
        return _finish(out, x)
    small = arr < 0.5
    # log G(x) = log G(x + 1) - log x keeps the Lanczos series in range
    shifted = np.where(small, arr + 1.0, arr)
    out = _lanczos_lgamma(shifted)
    out = np.where(small, out - np.log(arr), out)
    return _finish(out, x)


def digamma(x):
    """Derivative of log_gamma for x > 0."""
    xs = _scalar(x)
    if xs is not None:
        _check_scalar(xs, "digamma")
        return _digamma_scalar(xs)
    arr = _as_positive(x, "digamma")
    acc = np.zeros_like(arr)
    y = arr.copy()
    while True:
        low = y < _ASYMPTOTIC_FROM
        if not np.any(low):
            break
        acc = acc - np.where(low, 1.0 / y, 0.0)
        y = np.where(low, y + 1.0, y)
    r2 = 1.0 / (y * y)
    series = r2 * (1.0 / 12 - r2 * (1.0 / 120 - r2 * (1.0 / 252 - r2 * (1.0 / 240 - r2 * (1.0 / 132)))))
    out = np.log(y) - 0.5 / y - series + acc
    return _finish(out, x)


def trigamma(x):
    """Second derivative of log_gamma for x > 0."""
    xs = _scalar(x)
    if xs is not None:
        _check_scalar(xs, "trigamma")
        return _trigamma_scalar(xs)
    arr = _as_positive(x, "trigamma")
    acc = np.zeros_like(arr)
    y = arr.copy()
    while True:
        low = y < _ASYMPTOTIC_FROM
        if not np.any(low):
            break
        acc = acc + np.where(low, 1.0 / (y * y), 0.0)
        y = np.where(low, y + 1.0, y)
    r = 1.0 / y
    r2 = r * r
    series = r + 0.5 * r2 + r * r2 * (
        1.0 / 6 - r2 * (1.0 / 30 - r2 * (1.0 / 42 - r2 * (1.0 / 30 - r2 * (5.0 / 66))))
    )
    return _finish(series + acc, x)
