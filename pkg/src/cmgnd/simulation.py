"""Desk-scale simulation experiments on three-component GND mixtures.

Scenarios use weights (0.4, 0.3, 0.3), component 1 with scale 0.2 and
shape 0.5, and constraints tying components 2 and 3. Overlap is controlled
by the spacing of the component means only.
"""

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from itertools import permutations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ecm import FitConfig, ecm_fit, read_config_file
from .errors import CmgndError, ExperimentError, InputError
from .family import select_by_bic
from .mixture import ConstraintSpec, MixtureModel, marginal_moments, sample_mixture

WEIGHTS = (0.4, 0.3, 0.3)
DESIGNATED_BLOCK = (1, 2)
OVERLAP_MEANS = {
    "low": (0.0, 10.0, 20.0),
    "medium": (0.0, 7.0, 14.0),
    "high": (0.0, 5.0, 10.0),
}
# (sigma, nu) per generating model; means come from the overlap level
TRUE_SCALE_SHAPE = {
    "UUU": ((0.2, 1.5, 3.0), (0.5, 1.6, 4.0)),
    "UCU": ((0.2, 3.0, 3.0), (0.5, 1.6, 4.0)),
    "UUC": ((0.2, 1.5, 3.0), (0.5, 1.6, 1.6)),
    "UCC": ((0.2, 3.0, 3.0), (0.5, 1.6, 1.6)),
}
DEFAULT_CANDIDATES = ("UUU", "UCU", "UUC", "UCC")
MOMENT_NAMES = ("mean", "variance", "skewness", "kurtosis")
LABEL_STRATEGIES = ("mu", "params")


def param_names(K: int) -> List[str]:
    return ([f"pi{k}" for k in range(1, K + 1)] + [f"mu{k}" for k in range(1, K + 1)]
            + [f"sigma{k}" for k in range(1, K + 1)] + [f"nu{k}" for k in range(1, K + 1)])


def param_vector(m: MixtureModel) -> np.ndarray:
    return np.concatenate([m.w, m.mu, m.sigma, m.nu])


def true_model(code: str, overlap: str) -> MixtureModel:
    """Generating model for one column of the simulation design."""
    code = code.upper()
    if code not in TRUE_SCALE_SHAPE:
        raise InputError(f"no generating model {code!r}; choose from {sorted(TRUE_SCALE_SHAPE)}")
    if overlap not in OVERLAP_MEANS:
        raise InputError(f"overlap must be one of {sorted(OVERLAP_MEANS)}, got {overlap!r}")
    sigma, nu = TRUE_SCALE_SHAPE[code]
    spec = ConstraintSpec.from_code(code, 3, DESIGNATED_BLOCK)
    return MixtureModel.from_arrays(WEIGHTS, OVERLAP_MEANS[overlap], sigma, nu, spec)


@dataclass
class ScenarioConfig:
    true_spec: str = "UUU"
    overlap: str = "low"
    n: int = 1000
    reps: int = 50
    seed: int = 0
    fit_specs: Optional[Tuple[str, ...]] = None
    candidates: Tuple[str, ...] = DEFAULT_CANDIDATES
    fit: FitConfig = field(default_factory=FitConfig)
    n_jobs: int = 1
    label_match: str = "mu"

    def __post_init__(self):
        self.true_spec = self.true_spec.upper()
        true_model(self.true_spec, self.overlap)
        if self.n < 1 or self.reps < 1:
            raise InputError("n and reps must be >= 1")
        if self.fit_specs is None:
            self.fit_specs = tuple(dict.fromkeys((self.true_spec, "UUU")))
        self.fit_specs = tuple(s.upper() for s in self.fit_specs)
        self.candidates = tuple(s.upper() for s in self.candidates)
        if isinstance(self.fit, dict):
            self.fit = FitConfig.from_dict(self.fit)
        if self.label_match not in LABEL_STRATEGIES:
            raise InputError(f"label_match must be one of {LABEL_STRATEGIES}, got {self.label_match!r}")

    @property
    def model(self) -> MixtureModel:
        return true_model(self.true_spec, self.overlap)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        for key in ("fit_specs", "candidates"):
            if key in doc and doc[key] is not None:
                doc[key] = tuple(doc[key])
        allowed = set(cls.__dataclass_fields__)
        unknown = set(doc) - allowed
        if unknown:
            raise InputError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        return cls.from_dict(read_config_file(path))

    def summary(self) -> dict:
        return {"true_spec": self.true_spec, "overlap": self.overlap, "n": self.n,
                "reps": self.reps, "seed": self.seed}


def rep_seed(seed: int, rep: int, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, rep, stream])


def generate_scenario(sc: ScenarioConfig, rep: int, return_labels: bool = False):
    """The ``rep``-th simulated data set; depends only on (seed, rep)."""
    rng = np.random.default_rng(rep_seed(sc.seed, rep))
    return sample_mixture(sc.model, sc.n, rng, return_labels=return_labels)


def _fit_config(sc: ScenarioConfig, rep: int) -> FitConfig:
    fit_seed = int(rep_seed(sc.seed, rep, 1).generate_state(1)[0])
    return replace(sc.fit, seed=fit_seed)


def match_labels(fitted: MixtureModel, truth: MixtureModel, strategy: str = "mu") -> Tuple[int, ...]:
    """Permutation ``perm`` aligning ``fitted.permuted(perm)`` with ``truth``.

    ``"mu"`` minimises sum_k (mu_hat[perm[k]] - mu[k])^2; ``"params"`` uses
    the squared distance over all of (pi, mu, sigma, nu). Exhaustive search
    over the K! permutations.
    """
    if fitted.K != truth.K:
        raise InputError("fitted and true models differ in K")
    if strategy == "mu":
        est, ref = fitted.mu[:, None], truth.mu[:, None]
    elif strategy == "params":
        est = np.column_stack([fitted.w, fitted.mu, fitted.sigma, fitted.nu])
        ref = np.column_stack([truth.w, truth.mu, truth.sigma, truth.nu])
    else:
        raise InputError(f"label strategy must be one of {LABEL_STRATEGIES}, got {strategy!r}")
    best, best_cost = None, math.inf
    for perm in permutations(range(truth.K)):
        cost = float(np.sum((est[list(perm)] - ref) ** 2))
        if cost < best_cost:
            best, best_cost = perm, cost
    return best


def aligned(fitted: MixtureModel, truth: MixtureModel, strategy: str = "mu") -> MixtureModel:
    return fitted.permuted(match_labels(fitted, truth, strategy))


def _parallel_map(fn, items, n_jobs):
    if n_jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _fmt_csv(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt_csv(r[h]) for h in header])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# parameter RMSE
# ---------------------------------------------------------------------------

@dataclass
class RmseTable:
    scenario: dict
    specs: List[str]
    params: List[str]
    rmse: Dict[str, np.ndarray]
    n_ok: Dict[str, int]
    n_failed: Dict[str, int]
    fits: Dict[str, List[Optional[MixtureModel]]] = field(default_factory=dict, repr=False)

    def value(self, spec: str, param: str) -> float:
        return float(self.rmse[spec][self.params.index(param)])

    def rows(self) -> List[dict]:
        out = []
        for s in self.specs:
            for p, v in zip(self.params, self.rmse[s]):
                out.append({**self.scenario, "fit_spec": s, "param": p, "rmse": float(v),
                            "n_ok": self.n_ok[s], "n_failed": self.n_failed[s]})
        return out

    def to_csv(self) -> str:
        header = list(self.scenario) + ["fit_spec", "param", "rmse", "n_ok", "n_failed"]
        return _rows_to_csv(header, self.rows())

    def to_json(self) -> dict:
        return {"scenario": self.scenario,
                "rmse": {s: dict(zip(self.params, map(float, self.rmse[s]))) for s in self.specs},
                "n_ok": self.n_ok, "n_failed": self.n_failed}

    def to_table(self) -> str:
        lines = ["spec    " + " ".join(f"{p:>8}" for p in self.params)]
        for s in self.specs:
            lines.append(f"{s:<8}" + " ".join(f"{v:8.3g}" for v in self.rmse[s]))
        return "\n".join(lines)


def _default_fit(x, spec, cfg):
    return ecm_fit(x, spec.K, spec, cfg).model


def _rmse_rep(rep, sc, specs, fitter):
    x = generate_scenario(sc, rep)
    truth = sc.model
    cfg = _fit_config(sc, rep)
    out = {}
    for code in specs:
        spec = ConstraintSpec.from_code(code, truth.K, DESIGNATED_BLOCK)
        try:
            m = aligned(fitter(x, spec, cfg), truth, sc.label_match)
        except CmgndError:
            out[code] = None
            continue
        out[code] = ((param_vector(m) - param_vector(truth)) ** 2, m)
    return out


def _check_failures(n_failed, reps):
    for name, k in n_failed.items():
        if k > reps / 2:
            raise ExperimentError(f"{name}: {k} of {reps} replications failed")


def rmse_experiment(sc: ScenarioConfig, fit_specs: Optional[Sequence[str]] = None,
                    fitter: Optional[Callable] = None) -> RmseTable:
    """RMSE of every parameter for each fitted spec over ``sc.reps`` data sets.

    Fitted components are aligned to the truth with :func:`match_labels`.
    ``fitter(x, spec, cfg) -> MixtureModel`` replaces the ECM fit if given.
    """
    if sc.reps < 2:
        raise InputError("rmse_experiment needs reps >= 2")
    specs = [s.upper() for s in (fit_specs or sc.fit_specs)]
    fitter = fitter or _default_fit
    results = _parallel_map(partial(_rmse_rep, sc=sc, specs=specs, fitter=fitter),
                            range(sc.reps), sc.n_jobs)
    K = sc.model.K
    names = param_names(K)
    rmse, n_ok, n_failed, fits = {}, {}, {}, {}
    for s in specs:
        sq = [r[s][0] for r in results if r[s] is not None]
        fits[s] = [r[s][1] if r[s] is not None else None for r in results]
        n_ok[s] = len(sq)
        n_failed[s] = sc.reps - len(sq)
        rmse[s] = np.sqrt(np.mean(sq, axis=0)) if sq else np.full(len(names), np.nan)
    _check_failures(n_failed, sc.reps)
    return RmseTable(sc.summary(), specs, names, rmse, n_ok, n_failed, fits)


# ---------------------------------------------------------------------------
# BIC selection frequencies
# ---------------------------------------------------------------------------

@dataclass
class SelectionFrequencies:
    scenario: dict
    candidates: List[str]
    counts: Dict[str, int]
    n_ok: int
    n_failed: int
    fits: List[Dict[str, Optional[MixtureModel]]] = field(default_factory=list, repr=False)

    @property
    def proportions(self) -> Dict[str, float]:
        return {c: (self.counts[c] / self.n_ok if self.n_ok else math.nan) for c in self.candidates}

    def rows(self) -> List[dict]:
        props = self.proportions
        return [{**self.scenario, "candidate": c, "selected": self.counts[c],
                 "proportion": float(props[c]), "n_ok": self.n_ok, "n_failed": self.n_failed}
                for c in self.candidates]

    def to_csv(self) -> str:
        header = list(self.scenario) + ["candidate", "selected", "proportion", "n_ok", "n_failed"]
        return _rows_to_csv(header, self.rows())

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "counts": self.counts,
                "proportions": self.proportions, "n_ok": self.n_ok, "n_failed": self.n_failed}

    def to_table(self) -> str:
        props = self.proportions
        return "\n".join(f"{c:<8}{self.counts[c]:>6}{props[c]:>10.3f}" for c in self.candidates)


def _selection_rep(rep, sc, candidates):
    x = generate_scenario(sc, rep)
    try:
        report = select_by_bic(x, candidates, sc.model.K, _fit_config(sc, rep), DESIGNATED_BLOCK)
    except CmgndError:
        return None
    models = {e.label: (e.result.model if e.result else None) for e in report.entries}
    return report.best.label, models


def bic_selection_experiment(sc: ScenarioConfig, candidates: Optional[Sequence[str]] = None
                             ) -> SelectionFrequencies:
    """How often each candidate attains the lowest BIC across replications."""
    cands = [c.upper() for c in (candidates or sc.candidates)]
    results = _parallel_map(partial(_selection_rep, sc=sc, candidates=cands), range(sc.reps), sc.n_jobs)
    counts = {c: 0 for c in cands}
    fits = []
    for r in results:
        if r is not None:
            counts[r[0]] += 1
            fits.append(r[1])
    n_ok = sum(counts.values())
    _check_failures({"selection": sc.reps - n_ok}, sc.reps)
    return SelectionFrequencies(sc.summary(), cands, counts, n_ok, sc.reps - n_ok, fits)


# ---------------------------------------------------------------------------
# marginal moment RMSE
# ---------------------------------------------------------------------------

SELECTED = "BIC-selected"


@dataclass
class MomentTable:
    scenario: dict
    models: List[str]
    rmse: Dict[str, np.ndarray]
    n_ok: Dict[str, int]
    selection_counts: Dict[str, int]
    true_moments: Tuple[float, ...] = ()

    def value(self, model: str, moment: str) -> float:
        return float(self.rmse[model][MOMENT_NAMES.index(moment)])

    def rows(self) -> List[dict]:
        return [{**self.scenario, "model": m, "moment": name, "rmse": float(v), "n_ok": self.n_ok[m]}
                for m in self.models for name, v in zip(MOMENT_NAMES, self.rmse[m])]

    def to_csv(self) -> str:
        header = list(self.scenario) + ["model", "moment", "rmse", "n_ok"]
        return _rows_to_csv(header, self.rows())

    def to_json(self) -> dict:
        return {"scenario": self.scenario,
                "true_moments": dict(zip(MOMENT_NAMES, self.true_moments)),
                "rmse": {m: dict(zip(MOMENT_NAMES, map(float, self.rmse[m]))) for m in self.models},
                "n_ok": self.n_ok, "selection_counts": self.selection_counts}

    def to_table(self) -> str:
        lines = ["model         " + " ".join(f"{n:>10}" for n in MOMENT_NAMES)]
        for m in self.models:
            lines.append(f"{m:<14}" + " ".join(f"{v:10.4g}" for v in self.rmse[m]))
        return "\n".join(lines)


def _moment_rep(rep, sc, candidates):
    r = _selection_rep(rep, sc, candidates)
    if r is None:
        return None
    winner, models = r
    out = {c: (marginal_moments(m) if m is not None else None) for c, m in models.items()}
    out[SELECTED] = out[winner]
    return winner, out


def moment_rmse_experiment(sc: ScenarioConfig, candidates: Optional[Sequence[str]] = None) -> MomentTable:
    """RMSE of fitted marginal moments against the generating model's moments.

    Reported for every candidate spec (the true spec is always included) and
    for the per-replication BIC winner.
    """
    cands = [c.upper() for c in (candidates or sc.candidates)]
    if sc.true_spec not in cands:
        cands.insert(0, sc.true_spec)
    truth = np.array(marginal_moments(sc.model))
    results = _parallel_map(partial(_moment_rep, sc=sc, candidates=cands), range(sc.reps), sc.n_jobs)
    models = cands + [SELECTED]
    errs = {m: [] for m in models}
    counts = {c: 0 for c in cands}
    for r in results:
        if r is None:
            continue
        counts[r[0]] += 1
        for m in models:
            if r[1][m] is not None:
                errs[m].append((np.array(r[1][m]) - truth) ** 2)
    n_ok = {m: len(errs[m]) for m in models}
    _check_failures({m: sc.reps - n_ok[m] for m in models}, sc.reps)
    rmse = {m: np.sqrt(np.mean(errs[m], axis=0)) for m in models}
    return MomentTable(sc.summary(), models, rmse, n_ok, counts, tuple(map(float, truth)))


EXPERIMENTS = {
    "rmse": rmse_experiment,
    "bic": bic_selection_experiment,
    "moments": moment_rmse_experiment,
}


def run_experiment(kind: str, sc: ScenarioConfig):
    try:
        fn = EXPERIMENTS[kind]
    except KeyError:
        raise InputError(f"experiment must be one of {sorted(EXPERIMENTS)}, got {kind!r}") from None
    return fn(sc)
