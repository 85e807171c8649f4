"""Price series ingestion, log-returns and descriptive statistics."""

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import InputError
from .mixture import MixtureModel, log_joint


@dataclass
class ReturnSeries:
    ticker: str
    dates: List[str]
    returns: np.ndarray


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    mean: float
    median: float
    std: float
    skewness: float
    kurtosis: float
    min: float
    max: float
    jb: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_table(self, ticker: str = "") -> str:
        names = ["N", "Mean", "Median", "Std", "Skewness", "Kurtosis", "Min", "Max", "JB"]
        vals = [str(self.n)] + [f"{v:.6g}" for v in (self.mean, self.median, self.std, self.skewness,
                                                     self.kurtosis, self.min, self.max, self.jb)]
        widths = [max(len(a), len(b)) for a, b in zip(names, vals)]
        head = "Ticker".ljust(max(6, len(ticker))) + "  " + "  ".join(n.rjust(w) for n, w in zip(names, widths))
        row = ticker.ljust(max(6, len(ticker))) + "  " + "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return head + "\n" + row


def read_column_csv(path, col: Optional[str] = None) -> Tuple[List[str], np.ndarray]:
    """Read (first-column identifiers, numeric column) from a CSV with a header.

    ``col`` is a header name or integer index; the last column by default.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    if col is None:
        j = len(header) - 1
    elif str(col).lstrip("-").isdigit():
        j = int(col)
    elif col in header:
        j = header.index(col)
    else:
        raise InputError(f"{path}: no column {col!r} in header {header}")
    ids, vals = [], []
    for lineno, r in enumerate(body, start=2):
        try:
            vals.append(float(r[j]))
        except (IndexError, ValueError):
            raise InputError(f"{path}:{lineno}: non-numeric value in column {header[j]!r}") from None
        ids.append(r[0])
    return ids, np.array(vals)


def compute_returns(prices) -> np.ndarray:
    """Daily percentage log-returns 100 * ln(P_t / P_{t-1})."""
    p = np.asarray(prices, dtype=float).ravel()
    if p.size < 2:
        raise InputError("need at least two prices")
    bad = np.flatnonzero(~(np.isfinite(p) & (p > 0)))
    if bad.size:
        raise InputError(f"price at index {int(bad[0])} is not a positive finite number: {p[bad[0]]!r}")
    return 100.0 * np.diff(np.log(p))


def load_return_series(path, col=None, ticker: Optional[str] = None) -> ReturnSeries:
    dates, prices = read_column_csv(path, col)
    return ReturnSeries(ticker or Path(path).stem, dates[1:], compute_returns(prices))


def jarque_bera(n: int, skewness: float, kurtosis: float) -> float:
    """n/6 (S^2 + (K - 3)^2 / 4) with K the non-excess kurtosis."""
    return n / 6.0 * (skewness ** 2 + (kurtosis - 3.0) ** 2 / 4.0)


def describe(returns) -> DescriptiveStats:
    """Moment-based summary statistics and the Jarque-Bera statistic."""
    r = np.asarray(returns, dtype=float).ravel()
    if r.size < 4:
        raise InputError("need at least 4 observations")
    if not np.all(np.isfinite(r)):
        raise InputError("returns contain non-finite values")
    d = r - r.mean()
    m2 = np.mean(d ** 2)
    if m2 == 0:
        raise InputError("zero variance: statistics undefined")
    skew = float(np.mean(d ** 3) / m2 ** 1.5)
    kurt = float(np.mean(d ** 4) / m2 ** 2)
    return DescriptiveStats(
        n=int(r.size),
        mean=float(r.mean()),
        median=float(np.median(r)),
        std=float(r.std(ddof=1)),
        skewness=skew,
        kurtosis=kurt,
        min=float(r.min()),
        max=float(r.max()),
        jb=float(jarque_bera(r.size, skew, kurt)),
    )


@dataclass
class DensityCurve:
    x: np.ndarray
    density: np.ndarray
    components: np.ndarray  # points x K, each column pi_k f_k(x)

    def to_csv(self) -> str:
        K = self.components.shape[1]
        lines = [",".join(["x", "density"] + [f"component{k}" for k in range(1, K + 1)])]
        for xi, di, ci in zip(self.x, self.density, self.components):
            lines.append(",".join(repr(float(v)) for v in (xi, di, *ci)))
        return "\n".join(lines) + "\n"


def density_curve(m: MixtureModel, lo: float, hi: float, points: int) -> DensityCurve:
    """Mixture density and weighted component densities on a uniform grid."""
    if not lo < hi or points < 2:
        raise InputError("density grid needs lo < hi and points >= 2")
    x = np.linspace(lo, hi, int(points))
    comps = np.exp(log_joint(x, m.w, m.mu, m.sigma, m.nu))
    return DensityCurve(x, comps.sum(axis=1), comps)


def trapezoid(y, x) -> float:
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)
