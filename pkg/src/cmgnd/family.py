"""Candidate constrained models and BIC-based selection among them."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .ecm import FitConfig, FitResult, ecm_fit
from .errors import CmgndError, InputError, SelectionFailure
from .mixture import PARAM_KINDS, ConstraintSpec, label

log = logging.getLogger(__name__)

# row order of the K=2 model family; CCC is left out because it makes the
# constrained components identical
FAMILY_CODES = ("UUU", "CUU", "UCU", "UUC", "CCU", "CUC", "UCC")


def enumerate_family(K: int, palette: Sequence[str] = PARAM_KINDS,
                     block: Optional[Sequence[int]] = None) -> List[ConstraintSpec]:
    """Constraint specs whose constrained kinds are drawn from ``palette``.

    Each parameter kind is either unconstrained or tied across the single
    designated ``block`` (0-based component indices, default all components).
    """
    if K < 2:
        raise InputError(f"a model family needs K >= 2, got {K}")
    palette = set(palette)
    unknown = palette - set(PARAM_KINDS)
    if unknown:
        raise InputError(f"unknown parameter kinds in palette: {sorted(unknown)}")
    block = tuple(range(K)) if block is None else tuple(block)
    if len(set(block)) < 2 or not set(block) <= set(range(K)):
        raise InputError(f"designated block {block!r} must hold >= 2 of components 0..{K - 1}")
    specs = []
    for code in FAMILY_CODES:
        constrained = {kind for kind, c in zip(PARAM_KINDS, code) if c == "C"}
        if constrained <= palette:
            specs.append(ConstraintSpec.from_code(code, K, block))
    return specs


@dataclass
class SelectionEntry:
    label: str
    spec: ConstraintSpec
    result: Optional[FitResult]
    bic: float
    rank: int = 0
    error: Optional[str] = None

    @property
    def log_lik(self) -> float:
        return self.result.log_lik if self.result else math.nan

    @property
    def n_params(self) -> Optional[int]:
        return self.result.n_params if self.result else None


@dataclass
class SelectionReport:
    entries: List[SelectionEntry] = field(default_factory=list)
    winner: int = 0
    diagnostics: List[str] = field(default_factory=list)

    @property
    def best(self) -> SelectionEntry:
        return self.entries[self.winner]

    def ranked(self) -> List[SelectionEntry]:
        return sorted(self.entries, key=lambda e: e.rank)

    def to_json(self) -> dict:
        rows = []
        for i, e in enumerate(self.entries):
            rows.append({
                "label": e.label,
                "constraints": e.spec.to_json(),
                "rank": e.rank,
                "winner": i == self.winner,
                "n_params": e.n_params,
                "log_lik": e.log_lik if e.result else None,
                "bic": e.bic if math.isfinite(e.bic) else None,
                "n_obs": int(e.result.responsibilities.shape[0]) if e.result else None,
                "model": e.result.model.to_json() if e.result else None,
                "error": e.error,
            })
        return {"winner": self.best.label, "entries": rows, "diagnostics": list(self.diagnostics)}

    def to_table(self) -> str:
        """Plain-text table: parameters by row, models by column, winner marked '*'."""
        K = self.entries[0].spec.K
        names = []
        for k in range(1, K + 1):
            names += [f"pi_{k}", f"mu_{k}", f"sigma_{k}", f"nu_{k}"]
        cols = []
        for i, e in enumerate(self.entries):
            vals = {}
            if e.result:
                m = e.result.model
                for k in range(K):
                    vals[f"pi_{k + 1}"] = m.weights[k]
                    vals[f"mu_{k + 1}"] = m.components[k].mu
                    vals[f"sigma_{k + 1}"] = m.components[k].sigma
                    vals[f"nu_{k + 1}"] = m.components[k].nu
            head = e.label + ("*" if i == self.winner else "")
            cells = [_fmt(vals.get(n)) for n in names]
            cells += [str(e.n_params) if e.n_params is not None else "-",
                      _fmt(e.log_lik if e.result else None),
                      _fmt(e.bic if math.isfinite(e.bic) else None),
                      str(e.rank)]
            cols.append([head] + cells)
        row_names = [""] + names + ["p", "logL", "BIC", "rank"]
        width0 = max(len(r) for r in row_names)
        widths = [max(len(c) for c in col) for col in cols]
        lines = []
        for r, name in enumerate(row_names):
            cells = [col[r].rjust(w) for col, w in zip(cols, widths)]
            lines.append(name.ljust(width0) + "  " + "  ".join(cells))
        lines.append("* lowest BIC")
        lines += ["! " + d for d in self.diagnostics]
        return "\n".join(lines)


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.6g}"


NESTING_SLACK = 1e-3


def refines(fine: ConstraintSpec, coarse: ConstraintSpec) -> bool:
    """True when every block of ``fine`` lies inside a block of ``coarse``.

    The model with constraints ``coarse`` is then nested in ``fine``'s.
    """
    for kind in PARAM_KINDS:
        big = [set(b) for b in coarse.blocks(kind)]
        if not all(any(set(b) <= c for c in big) for b in fine.blocks(kind)):
            return False
    return True


def nesting_violations(entries: Sequence[SelectionEntry], slack: float = NESTING_SLACK) -> List[str]:
    """Pairs where a less constrained fit ended below a nested, more constrained one."""
    out = []
    for a in entries:
        for b in entries:
            if a is b or a.result is None or b.result is None or a.spec == b.spec:
                continue
            if refines(a.spec, b.spec) and a.log_lik < b.log_lik - slack:
                out.append(f"nesting: {a.label} logL {a.log_lik:.6f} < {b.label} logL {b.log_lik:.6f}")
    return out


def as_spec(candidate, K: int, block: Optional[Sequence[int]] = None) -> ConstraintSpec:
    if isinstance(candidate, ConstraintSpec):
        return candidate
    if isinstance(candidate, str):
        return ConstraintSpec.from_code(candidate, K, block)
    if isinstance(candidate, dict):
        return ConstraintSpec.from_json(candidate, K)
    raise InputError(f"cannot interpret candidate {candidate!r}")


def select_by_bic(data, candidates, K: int, cfg: FitConfig = None,
                  block: Optional[Sequence[int]] = None) -> SelectionReport:
    """Fit every candidate with identical start seeds and rank by BIC.

    Candidates may be ConstraintSpecs, model codes (tied over ``block``) or
    JSON-style constraint dicts. Failed fits get infinite BIC and rank last.
    """
    cfg = cfg or FitConfig()
    specs = [as_spec(c, K, block) for c in candidates]
    if not specs:
        raise InputError("no candidate models given")
    entries = []
    for spec in specs:
        try:
            res = ecm_fit(data, K, spec, cfg)
            entries.append(SelectionEntry(label(spec), spec, res, res.bic))
        except InputError:
            raise
        except CmgndError as exc:
            entries.append(SelectionEntry(label(spec), spec, None, math.inf, error=str(exc)))
    order = sorted(range(len(entries)), key=lambda i: (entries[i].bic, i))
    for rank, i in enumerate(order, start=1):
        entries[i].rank = rank
    if not np.isfinite(entries[order[0]].bic):
        raise SelectionFailure("every candidate fit failed")
    # local optima of multi-start fits can break the nesting order
    diagnostics = nesting_violations(entries)
    for d in diagnostics:
        log.warning(d)
    return SelectionReport(entries, order[0], diagnostics)
