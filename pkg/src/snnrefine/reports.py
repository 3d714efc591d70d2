"""Recognition reports and the concept-level view of traces.

Both single-rep and multi-rep networks are read the same way: for each
concept c, count how many of its representing neurons fire at time
level(c). A single-rep assignment is just the m = 1 case.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from collections.abc import Mapping, Sequence

import numpy as np

from ._rational import fmt
from .engine import NetworkConfig, NeuronId, TraceBatch
from .hierarchy import ConceptHierarchy, ConceptId, support_table

SHOULD_FIRE = "should_fire"
SHOULD_NOT_FIRE = "should_not_fire"


@dataclass(frozen=True)
class Violation:
    concept: ConceptId
    kind: str
    count: int | None = None

    def to_dict(self) -> dict:
        d = {"concept": str(self.concept), "kind": self.kind}
        if self.count is not None:
            d["count"] = self.count
        return d


@dataclass(frozen=True)
class RecognitionReport:
    network: str
    B: frozenset[ConceptId]
    violations: tuple[Violation, ...]
    counts: Mapping[ConceptId, int] | None = None
    bound: Fraction | None = None
    parts: tuple[str, ...] = (SHOULD_FIRE, SHOULD_NOT_FIRE)

    @property
    def passed(self) -> bool:
        return not self.violations

    def violating(self, kind: str | None = None) -> list[ConceptId]:
        return [v.concept for v in self.violations if kind is None or v.kind == kind]

    def to_dict(self) -> dict:
        d = {
            "network": self.network,
            "B": [str(b) for b in sorted(self.B)],
            "violations": [v.to_dict() for v in self.violations],
            "pass": self.passed,
        }
        if self.counts is not None:
            d["counts"] = {str(c): n for c, n in sorted(self.counts.items())}
        if self.bound is not None:
            d["bound"] = fmt(self.bound)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"


_GATHER_CACHE: dict = {}


@dataclass(frozen=True, eq=False)
class RepGather:
    """Index arrays that pull each concept's rep firing out of a trace batch.

    ``concepts`` follows ``h.concepts()`` order; ``flat[i]`` lists the flat
    neuron positions of the reps of ``concepts[i]`` and ``level[i]`` its level.
    """

    concepts: tuple[ConceptId, ...]
    level: np.ndarray
    flat: np.ndarray
    m: int = field(default=1)

    @classmethod
    def build(cls, h: ConceptHierarchy, config: NetworkConfig,
              reps: Mapping[ConceptId, Sequence[NeuronId]]) -> "RepGather":
        key = (h, config.widths, tuple(sorted(reps.items())))
        hit = _GATHER_CACHE.get(key)
        if hit is None:
            hit = _GATHER_CACHE[key] = cls._build(h, config, reps)
            if len(_GATHER_CACHE) > 256:
                _GATHER_CACHE.pop(next(iter(_GATHER_CACHE)))
        return hit

    @classmethod
    def _build(cls, h, config, reps) -> "RepGather":
        concepts = tuple(h.concepts())
        m = len(reps[concepts[0]])
        flat = np.array([[config.flat(v) for v in reps[c]] for c in concepts], dtype=np.intp)
        level = np.array([c.level for c in concepts], dtype=np.intp)
        return cls(concepts, level, flat.reshape(len(concepts), m), m)

    def counts(self, batch: TraceBatch) -> np.ndarray:
        """(n_inputs, n_concepts) count of reps firing at time level(c)."""
        lv = np.broadcast_to(self.level[:, None], self.flat.shape)
        return batch.firing[:, lv, self.flat].sum(axis=2)

    def per_neuron(self, batch: TraceBatch) -> np.ndarray:
        """(n_inputs, n_concepts, m) firing of each rep at time level(c)."""
        lv = np.broadcast_to(self.level[:, None], self.flat.shape)
        return batch.firing[:, lv, self.flat]


class LazySets(Sequence):
    """Input sets of a mask batch, materialized on access."""

    def __init__(self, leaves0: Sequence[ConceptId], masks: np.ndarray):
        self.leaves0, self.masks = leaves0, masks

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, b):
        return frozenset(self.leaves0[j] for j in np.flatnonzero(self.masks[b]))


def support_matrix(h: ConceptHierarchy, masks: np.ndarray, r) -> np.ndarray:
    """(n_inputs, n_concepts) support indicator, columns in ``h.concepts()`` order."""
    return np.concatenate(support_table(h, masks, r), axis=1)


def recognition_violations(counts: np.ndarray, supp_fire: np.ndarray | None,
                           supp_nonfire: np.ndarray | None, need: int):
    """Boolean violation matrices for the firing and non-firing parts.

    firing part: supported (for the firing ratio) but fewer than ``need`` reps fire.
    non-firing part: unsupported (for the non-firing ratio) yet some rep fires.
    """
    vf = None if supp_fire is None else supp_fire & (counts < need)
    vn = None if supp_nonfire is None else ~supp_nonfire & (counts > 0)
    return vf, vn


def build_reports(network: str, h: ConceptHierarchy, B_sets, counts, vf, vn,
                  *, with_counts: bool = False, bound: Fraction | None = None,
                  failures_only: bool = False) -> list[RecognitionReport]:
    """One report per input set, or only for the violating ones with ``failures_only``."""
    concepts = tuple(h.concepts())
    parts = tuple(p for p, v in ((SHOULD_FIRE, vf), (SHOULD_NOT_FIRE, vn)) if v is not None)
    rows = range(len(B_sets))
    if failures_only:
        bad = np.zeros(counts.shape[0], dtype=bool)
        for v in (vf, vn):
            if v is not None:
                bad |= v.any(axis=1)
        rows = np.flatnonzero(bad)
    out = []
    for b in rows:
        B = B_sets[b]
        viol = []
        for i, c in enumerate(concepts):
            n = int(counts[b, i]) if with_counts else None
            if vf is not None and vf[b, i]:
                viol.append(Violation(c, SHOULD_FIRE, n))
            if vn is not None and vn[b, i]:
                viol.append(Violation(c, SHOULD_NOT_FIRE, n))
        cmap = {c: int(counts[b, i]) for i, c in enumerate(concepts)} if with_counts else None
        out.append(RecognitionReport(network, frozenset(B), tuple(viol), cmap, bound, parts))
    return out
