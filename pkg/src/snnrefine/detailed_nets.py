"""Detailed networks with m representing neurons per concept.

``H`` has weight-1 edges from every rep of every child to every rep of the
parent, threshold r2*k*m*(1-eps), and a fixed failed set F in which each
concept keeps at least m*(1-eps) surviving reps.

``L`` has weight-1 edges only on a given set E of child-rep -> parent-rep
pairs and threshold a*r2*k*m*(1-eps). Besides the survival constraint on F,
every parent rep v and child c' need at least a*m*(1-eps) reps of c' that
survive and are connected to v.

The constraint checks are separate functions so that violating F and E can be
built for negative tests; the builders enforce them unless told not to.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from ._rational import as_rational, fmt, int_threshold
from .engine import (ExecutionTrace, Network, NetworkConfig, NeuronId,
                     Presentation, TraceBatch, execute_batch)
from .errors import ContractError, ParameterError, PreconditionError, QueryError
from .hierarchy import ConceptHierarchy, ConceptId, check_level0_subset, sets_to_masks
from .reports import (LazySets, RecognitionReport, RepGather, build_reports,
                      recognition_violations, support_matrix)


@dataclass(frozen=True)
class DetailedParams:
    m: int
    epsilon: Fraction
    r1: Fraction
    r2: Fraction
    a: Fraction = Fraction(1)

    def __post_init__(self):
        if not isinstance(self.m, int) or isinstance(self.m, bool) or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m!r}")
        eps = as_rational(self.epsilon, "epsilon")
        r1, r2, a = (as_rational(x, n) for x, n in ((self.r1, "r1"), (self.r2, "r2"), (self.a, "a")))
        if not 0 <= eps <= 1:
            raise ParameterError(f"epsilon must lie in [0, 1], got {eps}")
        if not (0 <= r1 <= 1 and 0 <= r2 <= 1):
            raise ParameterError(f"r1, r2 must lie in [0, 1], got {r1}, {r2}")
        if not 0 < a <= 1:
            raise ParameterError(f"a must lie in (0, 1], got {a}")
        for name, v in (("epsilon", eps), ("r1", r1), ("r2", r2), ("a", a)):
            object.__setattr__(self, name, v)

    @property
    def survivors_needed(self) -> Fraction:
        """m*(1-eps): the survival bound and the firing count in recognition."""
        return self.m * (1 - self.epsilon)

    @property
    def connected_needed(self) -> Fraction:
        return self.a * self.m * (1 - self.epsilon)

    def gap_ok(self, kind: str) -> bool:
        if kind == "H":
            return self.r1 <= self.r2 * (1 - self.epsilon)
        if kind == "L":
            return self.r1 <= self.a * self.r2 * (1 - self.epsilon)
        raise ParameterError(f"unknown detailed network {kind!r}")

    def tau_range(self, kind: str, k: int) -> tuple[Fraction, Fraction]:
        """Admissible threshold interval offered for each network; the default is the top end."""
        scale = k * self.m * (1 - self.epsilon) * (self.a if kind == "L" else 1)
        return self.r1 * scale, self.r2 * scale

    def to_dict(self) -> dict:
        return {"m": self.m, "epsilon": fmt(self.epsilon), "r1": fmt(self.r1),
                "r2": fmt(self.r2), "a": fmt(self.a)}


@dataclass(frozen=True)
class MultiRepAssignment:
    reps: Mapping[ConceptId, tuple[NeuronId, ...]]

    def __post_init__(self):
        reps = {ConceptId(*c): tuple(sorted(NeuronId(*v) for v in vs)) for c, vs in dict(self.reps).items()}
        sizes = {len(vs) for vs in reps.values()}
        if len(sizes) != 1:
            raise ContractError(f"every concept needs the same number of reps, got sizes {sorted(sizes)}")
        seen: dict[NeuronId, ConceptId] = {}
        for c, vs in reps.items():
            for v in vs:
                if v.layer != c.level:
                    raise ContractError(f"rep {v} of {c} is not at layer {c.level}")
                if v in seen:
                    raise ContractError(f"neuron {v} represents both {seen[v]} and {c}")
                seen[v] = c
        object.__setattr__(self, "reps", reps)

    @property
    def m(self) -> int:
        return len(next(iter(self.reps.values())))

    def reps_of(self, c: ConceptId) -> tuple[NeuronId, ...]:
        return self.reps[c]

    def as_multi(self) -> Mapping[ConceptId, tuple[NeuronId, ...]]:
        return self.reps

    def owner(self) -> dict[NeuronId, ConceptId]:
        return {v: c for c, vs in self.reps.items() for v in vs}

    def __hash__(self):
        return hash(tuple(sorted(self.reps.items())))


def canonical_multi_assignment(h: ConceptHierarchy, m: int) -> MultiRepAssignment:
    """reps of the concept at position i of level l are neurons (l, i*m) .. (l, i*m + m - 1)."""
    return MultiRepAssignment({
        c: tuple(NeuronId(lvl, i * m + j) for j in range(m))
        for lvl, cs in enumerate(h.levels) for i, c in enumerate(cs)
    })


@dataclass(frozen=True)
class FailurePattern:
    F: frozenset[NeuronId] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "F", frozenset(NeuronId(*u) for u in self.F))

    def __len__(self) -> int:
        return len(self.F)

    def __contains__(self, u) -> bool:
        return u in self.F

    def to_dict(self) -> dict:
        return {"failed": [str(u) for u in sorted(self.F)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, d) -> "FailurePattern":
        return cls(frozenset(NeuronId.parse(s) for s in d["failed"]))

    @classmethod
    def from_json(cls, text: str) -> "FailurePattern":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class EdgeSet:
    """Weight-1 edges as (source, target) pairs, source one layer below target."""

    E: frozenset[tuple[NeuronId, NeuronId]] = frozenset()

    def __post_init__(self):
        E = frozenset((NeuronId(*u), NeuronId(*v)) for u, v in self.E)
        bad = [(u, v) for u, v in E if v.layer != u.layer + 1]
        if bad:
            raise ContractError(f"edges must join successive layers; offending: {sorted(bad)[:3]}")
        object.__setattr__(self, "E", E)

    def __len__(self) -> int:
        return len(self.E)

    def __contains__(self, pair) -> bool:
        return pair in self.E

    def without(self, *pairs) -> "EdgeSet":
        return EdgeSet(self.E - {(NeuronId(*u), NeuronId(*v)) for u, v in pairs})

    def to_dict(self) -> dict:
        return {"edges": [[str(u), str(v)] for u, v in sorted(self.E, key=lambda e: (e[1], e[0]))]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, d) -> "EdgeSet":
        return cls(frozenset((NeuronId.parse(u), NeuronId.parse(v)) for u, v in d["edges"]))

    @classmethod
    def from_json(cls, text: str) -> "EdgeSet":
        return cls.from_dict(json.loads(text))


def rep_edge_pairs(assign: MultiRepAssignment, h: ConceptHierarchy):
    """Every potential child-rep -> parent-rep pair, in canonical (target, source) order."""
    for c in h.concepts():
        if c.level == 0:
            continue
        kids = sorted(h.children[c])
        for v in assign.reps[c]:
            for kid in kids:
                for u in assign.reps[kid]:
                    yield (u, v)


def complete_edges(assign: MultiRepAssignment, h: ConceptHierarchy) -> EdgeSet:
    return EdgeSet(frozenset(rep_edge_pairs(assign, h)))


def validate_edges(E: EdgeSet, assign: MultiRepAssignment, h: ConceptHierarchy) -> None:
    """Raise ContractError unless every edge joins a child rep to a parent rep."""
    owner = assign.owner()
    for u, v in E.E:
        cu, cv = owner.get(u), owner.get(v)
        if cu is None or cv is None or cu not in h.children.get(cv, ()):
            raise ContractError(f"edge {u}->{v} does not join reps(c') to reps(c) for a child c' of c")


@dataclass(frozen=True)
class ConstraintReport:
    constraint: str
    bound: Fraction
    violations: tuple[tuple[object, int], ...]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        def item(x):
            return [str(y) for y in x] if isinstance(x, tuple) and isinstance(x[0], tuple) else str(x)
        return {"constraint": self.constraint, "bound": fmt(self.bound), "pass": self.passed,
                "violations": [{"item": item(x), "count": n} for x, n in self.violations]}


def check_F_constraint(assign: MultiRepAssignment, F: FailurePattern, m: int, epsilon) -> ConstraintReport:
    """Every concept keeps at least m*(1-eps) non-failed reps."""
    bound = m * (1 - as_rational(epsilon, "epsilon"))
    viol = []
    for c in sorted(assign.reps):
        alive = sum(1 for v in assign.reps[c] if v not in F.F)
        if alive < bound:
            viol.append((c, alive))
    return ConstraintReport("F", bound, tuple(viol))


def check_E_constraint(assign: MultiRepAssignment, F: FailurePattern, E: EdgeSet, a, m: int,
                       epsilon, h: ConceptHierarchy) -> ConstraintReport:
    """Every parent rep v and child c' see >= a*m*(1-eps) surviving reps of c' connected to v."""
    bound = as_rational(a, "a") * m * (1 - as_rational(epsilon, "epsilon"))
    viol = []
    for c in h.concepts():
        if c.level == 0:
            continue
        for v in assign.reps[c]:
            for kid in sorted(h.children[c]):
                n = sum(1 for u in assign.reps[kid] if u not in F.F and (u, v) in E.E)
                if n < bound:
                    viol.append(((v, kid), n))
    return ConstraintReport("E", bound, tuple(viol))


def _widths(h: ConceptHierarchy, m: int, padding: int) -> tuple[int, ...]:
    return tuple(len(lvl) * m + padding for lvl in h.levels)


def _check_common(h, params, assign):
    if assign.m != params.m:
        raise ContractError(f"assignment has {assign.m} reps per concept, params say m={params.m}")
    if set(assign.reps) != set(h.concepts()):
        raise ContractError("assignment does not cover exactly the concepts of the hierarchy")


def _resolve_tau(kind, h, params, tau, strict):
    lo, hi = params.tau_range(kind, h.k)
    if strict and not params.gap_ok(kind):
        scale = (params.a if kind == "L" else 1) * (1 - params.epsilon)
        raise ParameterError(f"{kind} needs r1 <= {'a*' if kind == 'L' else ''}r2*(1-epsilon) = "
                             f"{params.r2 * scale}; got r1={params.r1}")
    if tau is None:
        return hi
    tau = as_rational(tau, "tau")
    if strict and not lo <= tau <= hi:
        raise ParameterError(f"tau override {tau} outside [{lo}, {hi}]")
    return tau


def build_H(h: ConceptHierarchy, params: DetailedParams, assign: MultiRepAssignment,
            F: FailurePattern, *, tau=None, strict: bool = True,
            check_constraints: bool = True, padding: int = 0) -> Network:
    """Fully connected detailed network.

    ``strict`` enforces the gap r1 <= r2*(1-eps) and keeps a ``tau`` override
    inside its admissible interval; ``check_constraints`` enforces the
    survival bound on F. Both exist so that gap and constraint violations can
    be probed deliberately.
    """
    _check_common(h, params, assign)
    if check_constraints:
        rep = check_F_constraint(assign, F, params.m, params.epsilon)
        if not rep.passed:
            c, n = rep.violations[0]
            raise PreconditionError(
                f"failure constraint violated at concept {c}: {n} surviving reps < {fmt(rep.bound)}", c)
    tau = _resolve_tau("H", h, params, tau, strict)
    widths = _widths(h, params.m, padding)
    weights = [np.zeros((widths[l], widths[l - 1]), dtype=np.int8) for l in range(1, h.l_max + 1)]
    for c in h.concepts():
        if c.level == 0:
            continue
        rows = [v.index for v in assign.reps[c]]
        cols = [u.index for kid in h.children[c] for u in assign.reps[kid]]
        weights[c.level - 1][np.ix_(rows, cols)] = 1
    return Network(NetworkConfig(h.l_max, widths, tau), tuple(weights), F.F)


def build_L(h: ConceptHierarchy, params: DetailedParams, assign: MultiRepAssignment,
            F: FailurePattern, E: EdgeSet, *, tau=None, strict: bool = True,
            check_constraints: bool = True, padding: int = 0) -> Network:
    """Partially connected detailed network with weight-1 edges exactly on ``E``."""
    _check_common(h, params, assign)
    validate_edges(E, assign, h)
    if check_constraints:
        rep = check_F_constraint(assign, F, params.m, params.epsilon)
        if not rep.passed:
            c, n = rep.violations[0]
            raise PreconditionError(
                f"failure constraint violated at concept {c}: {n} surviving reps < {fmt(rep.bound)}", c)
        rep = check_E_constraint(assign, F, E, params.a, params.m, params.epsilon, h)
        if not rep.passed:
            (v, kid), n = rep.violations[0]
            raise PreconditionError(
                f"connectivity constraint violated at ({v}, {kid}): "
                f"{n} surviving connected reps < {fmt(rep.bound)}", (v, kid))
    tau = _resolve_tau("L", h, params, tau, strict)
    widths = _widths(h, params.m, padding)
    weights = [np.zeros((widths[l], widths[l - 1]), dtype=np.int8) for l in range(1, h.l_max + 1)]
    for u, v in E.E:
        weights[v.layer - 1][v.index, u.index] = 1
    return Network(NetworkConfig(h.l_max, widths, tau), tuple(weights), F.F)


def present_multi(assign: MultiRepAssignment, B: Iterable[ConceptId], F: FailurePattern) -> Presentation:
    B = frozenset(B)
    bad = sorted(b for b in B if b[0] != 0 or b not in assign.reps)
    if bad:
        raise QueryError(f"B must contain only level-0 concepts; offending: {bad}")
    return Presentation(frozenset(u for b in B for u in assign.reps[b] if u not in F.F))


def multi_inputs(h: ConceptHierarchy, net: Network, assign: MultiRepAssignment,
                 masks: np.ndarray) -> np.ndarray:
    """Layer-0 firing rows presenting each input mask; failed reps stay silent."""
    m = assign.m
    cols = np.array([[u.index for u in assign.reps[c]] for c in h.leaves_c0], dtype=np.intp)
    rows = np.zeros((masks.shape[0], net.config.widths[0]), dtype=bool)
    rows[:, cols.ravel()] = np.repeat(np.asarray(masks, dtype=bool), m, axis=1)
    return rows & net.alive[:net.config.widths[0]]


def run_multi(h: ConceptHierarchy, net: Network, assign: MultiRepAssignment,
              masks: np.ndarray) -> TraceBatch:
    return execute_batch(net, multi_inputs(h, net, assign, masks))


def check_multi_batch(network: str, batch: TraceBatch, assign: MultiRepAssignment,
                      h: ConceptHierarchy, masks: np.ndarray, params: DetailedParams,
                      *, failures_only: bool = False) -> list[RecognitionReport]:
    gather = RepGather.build(h, batch.config, assign.reps)
    counts = gather.counts(batch)
    need = int_threshold(params.survivors_needed)
    vf, vn = recognition_violations(counts, support_matrix(h, masks, params.r2),
                                    support_matrix(h, masks, params.r1), need)
    return build_reports(network, h, LazySets(h.leaves_c0, masks), counts, vf, vn, with_counts=True,
                         bound=params.survivors_needed, failures_only=failures_only)


def check_recognition_multi(trace: ExecutionTrace, assign: MultiRepAssignment,
                            h: ConceptHierarchy, B, params: DetailedParams,
                            network: str = "D") -> RecognitionReport:
    """Part 1: each r2-supported concept has >= m(1-eps) reps firing at its level.
    Part 2: no rep of a concept outside supp_{r1}(B) fires at its level."""
    B = check_level0_subset(h, B)
    batch = TraceBatch(trace.config, trace.firing[None])
    return check_multi_batch(network, batch, assign, h, sets_to_masks(h, [B]), params)[0]
