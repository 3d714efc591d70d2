"""Implementation relations between a detailed and an abstract network.

For every input set B (enumerated exhaustively or sampled), both networks
are run and compared concept by concept at time level(c):

``impl1``  rep(c) fires in A  =>  at least m(1-eps) of reps(c) fire in D
``impl2``  rep(c) silent in A =>  no neuron of reps(c) fires in D
``impl``   both clauses against the same abstract network

``combined_pipeline`` checks impl1 against A1, impl2 against A2, the
abstract guarantees of A1/A2, and the direct multi-rep recognition check on
D, then confirms that the refinement route and the direct route agree.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._rational import as_rational, fmt, int_threshold
from .abstract_nets import (AbstractParams, build_A1, build_A2,
                            check_single_batch, run_single)
from .detailed_nets import (DetailedParams, EdgeSet, FailurePattern,
                            MultiRepAssignment, build_H, build_L,
                            check_multi_batch, complete_edges, run_multi)
from .engine import Network, TraceBatch
from .errors import ContractError, ParameterError
from .hierarchy import ConceptHierarchy, ConceptId
from .reports import SHOULD_NOT_FIRE, RecognitionReport, RepGather

DEFAULT_CAP = 8
PRNG_NAME = "numpy.random.PCG64 seeded via SeedSequence"


@dataclass(frozen=True)
class InputEnumeration:
    mode: str = "exhaustive"
    sample_count: int = 256
    seed: int = 0
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.mode not in ("exhaustive", "sampled"):
            raise ParameterError(f"mode must be 'exhaustive' or 'sampled', got {self.mode!r}")
        if self.sample_count < 1:
            raise ParameterError("sample_count must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "cap": self.cap}
        if self.mode == "sampled":
            d.update(sample_count=self.sample_count, seed=self.seed, prng=PRNG_NAME)
        return d


def enumerate_inputs(h: ConceptHierarchy, enum: InputEnumeration) -> np.ndarray:
    """Input sets as a boolean matrix of shape (n_inputs, |C_0|), columns in C_0 order.

    Exhaustive mode lists all 2^|C_0| subsets, row i having bit j of i in
    column j. Sampled mode puts the empty set and C_0 first, then
    ``sample_count`` sets with each leaf included with probability 1/2.
    """
    n = len(h.leaves_c0)
    if enum.mode == "exhaustive":
        if n > enum.cap:
            raise ParameterError(f"exhaustive enumeration needs |C_0| <= {enum.cap}, hierarchy has {n}")
        ids = np.arange(2 ** n, dtype=np.int64)
        return ((ids[:, None] >> np.arange(n)) & 1).astype(bool)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(enum.seed)))
    sampled = rng.integers(0, 2, size=(enum.sample_count, n)).astype(bool)
    forced = np.array([np.zeros(n, dtype=bool), np.ones(n, dtype=bool)])
    return np.concatenate([forced, sampled])


def mask_key(mask: np.ndarray) -> int:
    return int(sum(1 << int(j) for j in np.flatnonzero(mask)))


def fingerprint(h: ConceptHierarchy, *parts) -> str:
    """Stable hash of an instance: the hierarchy plus networks and JSON-able parts."""
    digest = hashlib.sha256(json.dumps(h.to_dict(), sort_keys=True).encode())
    for p in parts:
        if isinstance(p, Network):
            cfg = p.config
            digest.update(json.dumps([cfg.l_prime_max, list(cfg.widths), fmt(cfg.tau),
                                      sorted(str(u) for u in p.failed)]).encode())
            for W in p.weights:
                digest.update(np.ascontiguousarray(W).tobytes())
        else:
            digest.update(json.dumps(p.to_dict() if hasattr(p, "to_dict") else p, sort_keys=True).encode())
    return digest.hexdigest()[:16]


@dataclass(frozen=True)
class Counterexample:
    B: frozenset[ConceptId]
    concept: ConceptId
    detail: str
    abstract_trace: dict | None = None
    detailed_trace: dict | None = None

    def sort_key(self):
        return (len(self.B), sorted(self.B), self.concept)

    def to_dict(self) -> dict:
        d = {"B": [str(b) for b in sorted(self.B)], "concept": str(self.concept), "detail": self.detail}
        if self.abstract_trace is not None:
            d["abstract_trace"] = self.abstract_trace
        if self.detailed_trace is not None:
            d["detailed_trace"] = self.detailed_trace
        return d


@dataclass(frozen=True)
class RefinementVerdict:
    relation: str
    counterexamples: tuple[Counterexample, ...]
    n_inputs: int
    n_violations: int
    fingerprint: str = ""

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "fingerprint": self.fingerprint,
            "pass": self.passed,
            "n_inputs": self.n_inputs,
            "n_violations": self.n_violations,
            "counterexamples": [c.to_dict() for c in self.counterexamples],
        }


def _check_pair(D, A, h: ConceptHierarchy):
    for name, (net, assign) in (("detailed", D), ("abstract", A)):
        if net.config.l_prime_max != h.l_max:
            raise ContractError(f"{name} network has {net.config.l_prime_max} layers, hierarchy has l_max={h.l_max}")
        reps = assign.as_multi()
        if set(reps) != set(h.concepts()):
            raise ContractError(f"{name} rep assignment does not match the hierarchy's concepts")


@lru_cache(maxsize=128)
def _abstract_run(h: ConceptHierarchy, tau, masks_bytes: bytes, shape: tuple[int, int]):
    from .abstract_nets import build_abstract
    net, assign = build_abstract(h, tau)
    masks = np.frombuffer(masks_bytes, dtype=bool).reshape(shape)
    return net, assign, run_single(h, net, assign, masks)


def _run_abstract(A, h, masks) -> TraceBatch:
    net, assign = A
    return run_single(h, net, assign, masks)


def _relation_violations(relation, fire_A, counts_D, need):
    v1 = fire_A & (counts_D < need)
    v2 = ~fire_A & (counts_D > 0)
    if relation == "impl1":
        return v1, None
    if relation == "impl2":
        return None, v2
    return v1, v2


def _check_relation(relation: str, D, A, h: ConceptHierarchy, m: int, epsilon,
                    enum: InputEnumeration, *, max_counterexamples: int = 50,
                    masks: np.ndarray | None = None, batches=None) -> RefinementVerdict:
    _check_pair(D, A, h)
    (dnet, dassign), (anet, aassign) = D, A
    if dassign.m != m:
        raise ContractError(f"detailed assignment has {dassign.m} reps per concept, m={m}")
    if masks is None:
        masks = enumerate_inputs(h, enum)
    if batches is None:
        batches = (_run_abstract(A, h, masks), run_multi(h, dnet, dassign, masks))
    ab, db = batches
    concepts = tuple(h.concepts())
    fire_A = RepGather.build(h, anet.config, aassign.as_multi()).counts(ab) > 0
    counts_D = RepGather.build(h, dnet.config, dassign.reps).counts(db)
    bound = m * (1 - as_rational(epsilon, "epsilon"))
    need = int_threshold(bound)
    v1, v2 = _relation_violations(relation, fire_A, counts_D, need)

    found = []
    for v, label in ((v1, "fires"), (v2, "silent")):
        if v is None:
            continue
        for b, i in zip(*np.nonzero(v)):
            found.append((mask_key(masks[b]), int(i), int(b), label))
    found.sort()
    leaves0 = h.leaves_c0
    cex = []
    for key, i, b, label in found[:max_counterexamples]:
        c = concepts[i]
        if label == "fires":
            detail = f"rep fires in abstract; {counts_D[b, i]} of {m} reps fire in detailed, need {fmt(bound)}"
        else:
            detail = f"rep silent in abstract; {counts_D[b, i]} of {m} reps fire in detailed, need 0"
        B = frozenset(leaves0[j] for j in np.flatnonzero(masks[b]))
        cex.append(Counterexample(B, c, detail, ab[b].to_dict(), db[b].to_dict()))
    fp = fingerprint(h, dnet, anet, {"m": m, "epsilon": fmt(as_rational(epsilon))})
    return RefinementVerdict(relation, tuple(cex), int(masks.shape[0]), len(found), fp)


def check_impl1(D, A, h, m, epsilon, enum: InputEnumeration = InputEnumeration(), **kw) -> RefinementVerdict:
    """Firing side: D <=impl1 A."""
    return _check_relation("impl1", D, A, h, m, epsilon, enum, **kw)


def check_impl2(D, A, h, enum: InputEnumeration = InputEnumeration(), **kw) -> RefinementVerdict:
    """Non-firing side: D <=impl2 A. Does not depend on m or epsilon."""
    m = D[1].m
    return _check_relation("impl2", D, A, h, m, 0, enum, **kw)


def check_impl(D, A, h, m, epsilon, enum: InputEnumeration = InputEnumeration(), **kw) -> RefinementVerdict:
    """Both clauses against one abstract network (the relation the split version replaces)."""
    return _check_relation("impl", D, A, h, m, epsilon, enum, **kw)


def check_surviving_reps_fire(D, A, h: ConceptHierarchy, enum: InputEnumeration = InputEnumeration(),
                              *, masks=None, batches=None) -> RefinementVerdict:
    """Whenever rep(c) fires in A, every non-failed neuron of reps(c) fires in D.

    This is the strengthened induction hypothesis used for the partially
    connected network; it implies impl1 whenever the survival bound holds.
    """
    _check_pair(D, A, h)
    (dnet, dassign), (anet, aassign) = D, A
    if masks is None:
        masks = enumerate_inputs(h, enum)
    if batches is None:
        batches = (_run_abstract(A, h, masks), run_multi(h, dnet, dassign, masks))
    ab, db = batches
    fire_A = RepGather.build(h, anet.config, aassign.as_multi()).counts(ab) > 0
    g = RepGather.build(h, dnet.config, dassign.reps)
    per = g.per_neuron(db)
    alive = dnet.alive[g.flat]
    missing = (~per & alive[None]).any(axis=2) & fire_A
    concepts, leaves0 = tuple(h.concepts()), h.leaves_c0
    found = sorted((mask_key(masks[b]), int(i), int(b)) for b, i in zip(*np.nonzero(missing)))
    cex = tuple(
        Counterexample(frozenset(leaves0[j] for j in np.flatnonzero(masks[b])), concepts[i],
                       "rep fires in abstract; a surviving rep is silent in detailed")
        for _, i, b in found[:50])
    return RefinementVerdict("surviving_reps_fire", cex, int(masks.shape[0]), len(found),
                             fingerprint(h, dnet, anet))


@dataclass(frozen=True)
class PipelineReport:
    impl1: RefinementVerdict
    impl2: RefinementVerdict
    abstract_firing_ok: bool
    abstract_non_firing_ok: bool
    part1_failures: tuple[RecognitionReport, ...]
    part2_failures: tuple[RecognitionReport, ...]
    n_inputs: int
    fingerprint: str
    extra: dict = field(default_factory=dict)

    @property
    def part1_ok(self) -> bool:
        return not self.part1_failures

    @property
    def part2_ok(self) -> bool:
        return not self.part2_failures

    @property
    def direct_ok(self) -> bool:
        return self.part1_ok and self.part2_ok

    @property
    def sound(self) -> bool:
        """The refinement route implies the direct check's outcome."""
        ok1 = not (self.impl1.passed and self.abstract_firing_ok) or self.part1_ok
        ok2 = not (self.impl2.passed and self.abstract_non_firing_ok) or self.part2_ok
        return ok1 and ok2

    @property
    def agree(self) -> bool:
        """Refinement route and direct route give the same overall verdict."""
        route = self.impl1.passed and self.impl2.passed and self.abstract_firing_ok and self.abstract_non_firing_ok
        return route == self.direct_ok

    @property
    def passed(self) -> bool:
        return (self.impl1.passed and self.impl2.passed and self.abstract_firing_ok
                and self.abstract_non_firing_ok and self.direct_ok and self.sound)

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "pass": self.passed,
            "n_inputs": self.n_inputs,
            "abstract_firing_guarantee": self.abstract_firing_ok,
            "abstract_non_firing_guarantee": self.abstract_non_firing_ok,
            "impl1": self.impl1.to_dict(),
            "impl2": self.impl2.to_dict(),
            "direct": {
                "part1": self.part1_ok,
                "part2": self.part2_ok,
                "failures": [r.to_dict() for r in (self.part1_failures + self.part2_failures)[:50]],
            },
            "sound": self.sound,
            "agree": self.agree,
            **self.extra,
        }


def abstract_pair(h: ConceptHierarchy, params: DetailedParams):
    p = AbstractParams(params.r1, params.r2) if params.r1 <= params.r2 else None
    if p is None:
        raise ParameterError(f"abstract networks need r1 <= r2, got {params.r1} > {params.r2}")
    return build_A1(h, p), build_A2(h, p)


def combined_pipeline(D: tuple[Network, MultiRepAssignment], h: ConceptHierarchy,
                      params: DetailedParams, enum: InputEnumeration = InputEnumeration(),
                      *, masks: np.ndarray | None = None) -> PipelineReport:
    """impl1 against A1, impl2 against A2, and the direct recognition check on D."""
    dnet, dassign = D
    if masks is None:
        masks = enumerate_inputs(h, enum)
    A1, A2 = abstract_pair(h, params)
    key = (masks.tobytes(), masks.shape)
    a1b = _abstract_run(h, A1[0].tau, *key)[2]
    a2b = _abstract_run(h, A2[0].tau, *key)[2]
    db = run_multi(h, dnet, dassign, masks)

    v1 = check_impl1(D, A1, h, params.m, params.epsilon, enum, masks=masks, batches=(a1b, db))
    v2 = check_impl2(D, A2, h, enum, masks=masks, batches=(a2b, db))
    fire_ok = not check_single_batch("A1", a1b, A1[1], h, masks, r2=params.r2, failures_only=True)
    nonfire_ok = not check_single_batch("A2", a2b, A2[1], h, masks, r1=params.r1, failures_only=True)
    direct = check_multi_batch("D", db, dassign, h, masks, params, failures_only=True)
    p1 = tuple(r for r in direct if any(v.kind != SHOULD_NOT_FIRE for v in r.violations))
    p2 = tuple(r for r in direct if any(v.kind == SHOULD_NOT_FIRE for v in r.violations))
    return PipelineReport(v1, v2, fire_ok, nonfire_ok, p1, p2, int(masks.shape[0]),
                          fingerprint(h, dnet, params), {"params": params.to_dict(), "enumeration": enum.to_dict()})


def find_part2_counterexample(h: ConceptHierarchy, params: DetailedParams, kind: str,
                              enum: InputEnumeration = InputEnumeration(), *,
                              F: FailurePattern | None = None, E: EdgeSet | None = None,
                              assign: MultiRepAssignment | None = None):
    """Search the enumerated inputs for a concept outside supp_{r1}(B) whose reps fire.

    The detailed network is built without the gap check, so this probes
    whether r1 <= r2(1-eps) (H) or r1 <= a*r2(1-eps) (L) is load-bearing.
    Returns (B, concept, report) for the first hit in enumeration order, or None.
    """
    from .detailed_nets import canonical_multi_assignment
    assign = assign or canonical_multi_assignment(h, params.m)
    F = F or FailurePattern()
    if kind == "H":
        net = build_H(h, params, assign, F, strict=False)
    else:
        net = build_L(h, params, assign, F, E or complete_edges(assign, h), strict=False)
    masks = enumerate_inputs(h, enum)
    for rep in check_multi_batch(kind, run_multi(h, net, assign, masks), assign, h, masks, params):
        bad = rep.violating(SHOULD_NOT_FIRE)
        if bad:
            return rep.B, bad[0], rep
    return None
