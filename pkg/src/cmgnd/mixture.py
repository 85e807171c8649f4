"""Constrained mixtures of generalized normal distributions.

Equality constraints are expressed as three partitions of the component
indices, one per parameter kind. Components sharing a block share the
parameter value exactly. Indices are 0-based in Python and 1-based in the
JSON representation.
"""

import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, ParameterDomainError
from .gnd import GndParams, abs_central_moment, gnd_sample, log_pdf_array

PARAM_KINDS = ("mu", "sigma", "nu")

Partition = Tuple[Tuple[int, ...], ...]


class UnderflowWarning(RuntimeWarning):
    """Some observation has zero density under every component."""


def canonical_partition(blocks, K: int) -> Partition:
    """Sort members and blocks; check the blocks partition range(K)."""
    canon = tuple(sorted(tuple(sorted(int(i) for i in b)) for b in blocks))
    members = [i for b in canon for i in b]
    if any(len(b) == 0 for b in canon):
        raise InputError("constraint blocks must be nonempty")
    if len(members) != len(set(members)) or set(members) != set(range(K)):
        raise InputError(f"blocks {blocks!r} do not partition components 0..{K - 1}")
    return canon


def singletons(K: int) -> Partition:
    return tuple((k,) for k in range(K))


def one_block(K: int, block: Sequence[int]) -> Partition:
    block = tuple(sorted(block))
    rest = [(k,) for k in range(K) if k not in block]
    return canonical_partition([block] + rest, K)


@dataclass(frozen=True)
class ConstraintSpec:
    """Equality constraints on (mu, sigma, nu) across components."""

    K: int
    mu_blocks: Partition
    sigma_blocks: Partition
    nu_blocks: Partition

    def __post_init__(self):
        if self.K < 1:
            raise InputError(f"K must be >= 1, got {self.K}")
        for kind in PARAM_KINDS:
            name = f"{kind}_blocks"
            object.__setattr__(self, name, canonical_partition(getattr(self, name), self.K))

    @classmethod
    def unconstrained(cls, K: int) -> "ConstraintSpec":
        s = singletons(K)
        return cls(K, s, s, s)

    @classmethod
    def from_code(cls, code: str, K: int, block: Optional[Sequence[int]] = None) -> "ConstraintSpec":
        """Build a spec from a three-letter code such as ``"UCU"``.

        Every ``C`` constrains the designated ``block`` (0-based, default all
        components) and every ``U`` leaves that parameter unconstrained.
        """
        code = code.strip().upper()
        if len(code) != 3 or set(code) - {"C", "U"}:
            raise InputError(f"model code must be three letters over C/U, got {code!r}")
        block = tuple(range(K)) if block is None else tuple(block)
        if not block or not set(block) <= set(range(K)):
            raise InputError(f"designated block {block!r} is not a subset of 0..{K - 1}")
        parts = [one_block(K, block) if c == "C" else singletons(K) for c in code]
        return cls(K, *parts)

    def blocks(self, kind: str) -> Partition:
        return getattr(self, f"{kind}_blocks")

    @property
    def code(self) -> Optional[str]:
        """Three-letter code, or None when the partitions are not of that form.

        All constrained kinds must share the same single block.
        """
        letters = []
        shared = None
        for kind in PARAM_KINDS:
            big = [b for b in self.blocks(kind) if len(b) > 1]
            if not big:
                letters.append("U")
                continue
            if len(big) > 1 or (shared is not None and big[0] != shared):
                return None
            shared = big[0]
            letters.append("C")
        return "".join(letters)

    def n_free(self, kind: str) -> int:
        return len(self.blocks(kind))

    def permuted(self, perm: Sequence[int]) -> "ConstraintSpec":
        """Spec for a model whose component j is the old component perm[j]."""
        inv = {old: new for new, old in enumerate(perm)}
        parts = [[[inv[i] for i in b] for b in self.blocks(kind)] for kind in PARAM_KINDS]
        return ConstraintSpec(self.K, *parts)

    def to_json(self) -> dict:
        return {kind: [[i + 1 for i in b] for b in self.blocks(kind)] for kind in PARAM_KINDS}

    @classmethod
    def from_json(cls, doc: dict, K: int) -> "ConstraintSpec":
        """Inverse of :meth:`to_json`; omitted kinds or components are singletons."""
        parts = []
        for kind in PARAM_KINDS:
            raw = doc.get(kind)
            blocks = [] if raw is None else [[int(i) - 1 for i in b] for b in raw]
            listed = {i for b in blocks for i in b}
            # components not mentioned are unconstrained
            parts.append(blocks + [[k] for k in range(K) if k not in listed])
        return cls(K, *parts)

    def __str__(self):
        return self.code or repr(self.to_json())


def label(spec: ConstraintSpec) -> str:
    return spec.code or "custom:" + ";".join(
        f"{kind}=" + "|".join(",".join(str(i + 1) for i in b) for b in spec.blocks(kind))
        for kind in PARAM_KINDS
    )


@dataclass(frozen=True)
class MixtureModel:
    """Weights, component parameters and the constraints they satisfy."""

    weights: Tuple[float, ...]
    components: Tuple[GndParams, ...]
    constraints: ConstraintSpec

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        K = len(self.weights)
        if K != len(self.components) or K != self.constraints.K:
            raise ParameterDomainError("weights, components and constraints disagree on K")
        w = np.array(self.weights)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ParameterDomainError(f"weights must be positive, got {self.weights}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ParameterDomainError(f"weights must sum to 1, got {w.sum()!r}")
        for kind in PARAM_KINDS:
            values = [getattr(c, kind) for c in self.components]
            for b in self.constraints.blocks(kind):
                if any(values[i] != values[b[0]] for i in b):
                    raise ParameterDomainError(f"{kind} differs inside constrained block {b}")

    @classmethod
    def from_arrays(cls, weights, mu, sigma, nu, constraints=None) -> "MixtureModel":
        comps = tuple(GndParams(float(m), float(s), float(v)) for m, s, v in zip(mu, sigma, nu))
        if constraints is None:
            constraints = ConstraintSpec.unconstrained(len(comps))
        return cls(tuple(weights), comps, constraints)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def w(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def mu(self) -> np.ndarray:
        return np.array([c.mu for c in self.components])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([c.sigma for c in self.components])

    @property
    def nu(self) -> np.ndarray:
        return np.array([c.nu for c in self.components])

    def permuted(self, perm: Sequence[int]) -> "MixtureModel":
        """Relabel so new component j is old component perm[j]."""
        return MixtureModel(
            tuple(self.weights[i] for i in perm),
            tuple(self.components[i] for i in perm),
            self.constraints.permuted(perm),
        )

    def pdf(self, x):
        return np.exp(log_mixture_density(np.asarray(x, dtype=float), self))

    def to_json(self) -> dict:
        return {
            "weights": list(self.weights),
            "components": [c.to_dict() for c in self.components],
            "constraints": self.constraints.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MixtureModel":
        comps = tuple(GndParams(float(c["mu"]), float(c["sigma"]), float(c["nu"])) for c in doc["components"])
        K = len(comps)
        spec = ConstraintSpec.from_json(doc.get("constraints", {}), K)
        return cls(tuple(doc["weights"]), comps, spec)


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise InputError("data must be nonempty")
    if not np.all(np.isfinite(x)):
        raise InputError("data contains non-finite values")
    return x


def log_joint(x, w, mu, sigma, nu) -> np.ndarray:
    """N x K matrix of log pi_k + log f_k(x_n)."""
    return np.log(w) + log_pdf_array(x[:, None], mu, sigma, nu)


def e_step(x, w, mu, sigma, nu):
    """Responsibilities, log-likelihood and the mask of underflowed rows."""
    lj = log_joint(x, w, mu, sigma, nu)
    top = lj.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.exp(lj - top)
        s = e.sum(axis=1, keepdims=True)
        z = e / s
        row = (top + np.log(s))[:, 0]
    bad = ~np.isfinite(row)
    if bad.any():
        z[bad] = 1.0 / lj.shape[1]
    return z, float(row.sum()), bad


def log_mixture_density(x, m: MixtureModel) -> np.ndarray:
    xa = np.atleast_1d(x)
    out = logsumexp(log_joint(xa, m.w, m.mu, m.sigma, m.nu), axis=1)
    return out if np.ndim(x) else out[0]


def log_likelihood(data, m: MixtureModel) -> float:
    """Sum over observations of log sum_k pi_k f_k(x_n)."""
    x = _check_data(data)
    return float(np.sum(log_mixture_density(x, m)))


def responsibilities(data, m: MixtureModel) -> np.ndarray:
    """Posterior component membership probabilities, one row per observation.

    Rows whose density underflows under every component are set to 1/K and
    an :class:`UnderflowWarning` is emitted.
    """
    x = _check_data(data)
    z, _, bad = e_step(x, m.w, m.mu, m.sigma, m.nu)
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} observations underflowed; uniform responsibilities assigned",
                      UnderflowWarning, stacklevel=2)
    return z


def free_parameter_count(K: int, c: ConstraintSpec, fixed_nu: bool = False) -> int:
    """(K - 1) weights plus one free value per block of each partition."""
    if c.K != K:
        raise InputError(f"spec is for K={c.K}, not K={K}")
    p = (K - 1) + c.n_free("mu") + c.n_free("sigma")
    return p if fixed_nu else p + c.n_free("nu")


def bic(log_lik: float, p: int, n: int) -> float:
    """p log(n) - 2 log L; lower is better."""
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    return p * math.log(n) - 2.0 * log_lik


def component_central_moment(sigma, nu, j: int):
    """E(X - mu_k)^j for each component; zero for odd j."""
    if j == 0:
        return np.ones_like(np.asarray(sigma, dtype=float))
    if j % 2:
        return np.zeros_like(np.asarray(sigma, dtype=float))
    return abs_central_moment(sigma, nu, j)


def mixture_central_moment(m: MixtureModel, r: int) -> float:
    """E(X - E X)^r by binomial expansion of each component about the mixture mean."""
    mean = float(np.dot(m.w, m.mu))
    d = m.mu - mean
    total = np.zeros(m.K)
    for j in range(r + 1):
        total += math.comb(r, j) * d ** (r - j) * component_central_moment(m.sigma, m.nu, j)
    return float(np.dot(m.w, total))


def marginal_moments(m: MixtureModel):
    """(mean, variance, skewness, kurtosis) of the mixture; kurtosis is non-excess."""
    mean = float(np.dot(m.w, m.mu))
    m2 = mixture_central_moment(m, 2)
    m3 = mixture_central_moment(m, 3)
    m4 = mixture_central_moment(m, 4)
    return mean, m2, m3 / m2 ** 1.5, m4 / m2 ** 2


def sample_mixture(m: MixtureModel, n: int, rng: np.random.Generator, return_labels: bool = False):
    """Draw labels multinomially by weight, then values component by component."""
    labels = rng.choice(m.K, size=n, p=m.w / m.w.sum())
    x = np.empty(n)
    for k, comp in enumerate(m.components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            x[idx] = gnd_sample(comp, idx.size, rng)
    return (x, labels) if return_labels else x


def set_partitions(items):
    """All set partitions of ``items`` (Bell-number many); for small K only."""
    items = list(items)
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for size in range(len(rest) + 1):
        for mates in combinations(rest, size):
            remaining = [i for i in rest if i not in mates]
            for sub in set_partitions(remaining):
                yield ((first,) + mates,) + sub
