"""Abstract networks with one representing neuron per concept.

``A1`` uses the high threshold r2*k and carries the firing guarantee;
``A2`` uses the low threshold r1*k and carries the non-firing guarantee.
Both have weight-1 edges exactly from the reps of a concept's children to
the concept's rep, and no failures.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from ._rational import as_rational
from .engine import (ExecutionTrace, Network, NetworkConfig, NeuronId,
                     Presentation, TraceBatch, execute_batch)
from .errors import ContractError, ParameterError, QueryError
from .hierarchy import (ConceptHierarchy, ConceptId, check_level0_subset,
                        sets_to_masks)
from .reports import (LazySets, RecognitionReport, RepGather, build_reports,
                      recognition_violations, support_matrix)


@dataclass(frozen=True)
class AbstractParams:
    r1: Fraction
    r2: Fraction

    def __post_init__(self):
        r1, r2 = as_rational(self.r1, "r1"), as_rational(self.r2, "r2")
        if not (0 <= r1 <= 1 and 0 <= r2 <= 1):
            raise ParameterError(f"r1, r2 must lie in [0, 1], got {r1}, {r2}")
        if r1 > r2:
            raise ParameterError(f"need r1 <= r2, got r1={r1} > r2={r2}")
        object.__setattr__(self, "r1", r1)
        object.__setattr__(self, "r2", r2)


@dataclass(frozen=True)
class SingleRepAssignment:
    rep: Mapping[ConceptId, NeuronId]

    def __post_init__(self):
        rep = {ConceptId(*c): NeuronId(*v) for c, v in dict(self.rep).items()}
        if len(set(rep.values())) != len(rep):
            raise ContractError("rep neurons must be distinct")
        bad = [c for c, v in rep.items() if v.layer != c.level]
        if bad:
            raise ContractError(f"rep(c) must sit at layer level(c); offending: {sorted(bad)}")
        object.__setattr__(self, "rep", rep)

    def reps_of(self, c: ConceptId) -> tuple[NeuronId, ...]:
        return (self.rep[c],)

    def as_multi(self) -> dict[ConceptId, tuple[NeuronId, ...]]:
        return {c: (v,) for c, v in self.rep.items()}

    def __hash__(self):
        return hash(tuple(sorted(self.rep.items())))


def canonical_single_assignment(h: ConceptHierarchy) -> SingleRepAssignment:
    """rep((l, i)) = neuron at layer l, position of (l, i) within its level."""
    return SingleRepAssignment({c: NeuronId(lvl, i)
                                for lvl, cs in enumerate(h.levels) for i, c in enumerate(cs)})


def build_abstract(h: ConceptHierarchy, tau) -> tuple[Network, SingleRepAssignment]:
    """Single-rep network over ``h`` with threshold ``tau``; shared body of A1 and A2."""
    assign = canonical_single_assignment(h)
    widths = tuple(len(lvl) for lvl in h.levels)
    weights = []
    for lvl in range(1, h.l_max + 1):
        W = np.zeros((widths[lvl], widths[lvl - 1]), dtype=np.int8)
        for c in h.levels[lvl]:
            for kid in h.children[c]:
                W[assign.rep[c].index, assign.rep[kid].index] = 1
        weights.append(W)
    return Network(NetworkConfig(h.l_max, widths, tau), tuple(weights)), assign


def build_A1(h: ConceptHierarchy, p: AbstractParams) -> tuple[Network, SingleRepAssignment]:
    return build_abstract(h, p.r2 * h.k)


def build_A2(h: ConceptHierarchy, p: AbstractParams) -> tuple[Network, SingleRepAssignment]:
    return build_abstract(h, p.r1 * h.k)


def present_single(assign: SingleRepAssignment, B: Iterable[ConceptId]) -> Presentation:
    B = frozenset(B)
    bad = sorted(b for b in B if b[0] != 0 or b not in assign.rep)
    if bad:
        raise QueryError(f"B must contain only level-0 concepts; offending: {bad}")
    return Presentation(frozenset(assign.rep[b] for b in B))


def single_inputs(h: ConceptHierarchy, net: Network, assign: SingleRepAssignment,
                  masks: np.ndarray) -> np.ndarray:
    """Layer-0 firing rows presenting each input mask (columns in C_0 order)."""
    cols = np.array([assign.rep[c].index for c in h.leaves_c0], dtype=np.intp)
    rows = np.zeros((masks.shape[0], net.config.widths[0]), dtype=bool)
    rows[:, cols] = masks
    return rows


def run_single(h: ConceptHierarchy, net: Network, assign: SingleRepAssignment,
               masks: np.ndarray) -> TraceBatch:
    return execute_batch(net, single_inputs(h, net, assign, masks))


def check_single_batch(network: str, batch: TraceBatch, assign: SingleRepAssignment,
                       h: ConceptHierarchy, masks: np.ndarray, *, r1=None, r2=None,
                       failures_only: bool = False) -> list[RecognitionReport]:
    """Firing part (r2) and/or non-firing part (r1) over a batch of inputs."""
    gather = RepGather.build(h, batch.config, assign.as_multi())
    counts = gather.counts(batch)
    sf = None if r2 is None else support_matrix(h, masks, r2)
    sn = None if r1 is None else support_matrix(h, masks, r1)
    vf, vn = recognition_violations(counts, sf, sn, need=1)
    B_sets = LazySets(h.leaves_c0, masks)
    return build_reports(network, h, B_sets, counts, vf, vn, failures_only=failures_only)


def _one(trace: ExecutionTrace, assign, h, B, network, **rs) -> RecognitionReport:
    B = check_level0_subset(h, B)
    masks = sets_to_masks(h, [B])
    batch = TraceBatch(trace.config, trace.firing[None])
    return check_single_batch(network, batch, assign, h, masks, **rs)[0]


def check_firing_guarantee(trace: ExecutionTrace, assign: SingleRepAssignment,
                           h: ConceptHierarchy, B, r2, network: str = "A1") -> RecognitionReport:
    """Every r2-supported concept has its rep firing at time level(c)."""
    return _one(trace, assign, h, B, network, r2=as_rational(r2, "r2"))


def check_non_firing_guarantee(trace: ExecutionTrace, assign: SingleRepAssignment,
                               h: ConceptHierarchy, B, r1, network: str = "A2") -> RecognitionReport:
    """No concept outside supp_{r1}(B) has its rep firing at time level(c)."""
    return _one(trace, assign, h, B, network, r1=as_rational(r1, "r1"))


def check_recognition_single(trace: ExecutionTrace, assign: SingleRepAssignment,
                             h: ConceptHierarchy, B, r1, r2, network: str = "A") -> RecognitionReport:
    p = AbstractParams(r1, r2)
    return _one(trace, assign, h, B, network, r1=p.r1, r2=p.r2)
