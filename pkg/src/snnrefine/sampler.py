"""Random failure patterns and connectivity, and Monte-Carlo constraint estimates.

All randomness comes from numpy's PCG64 generator keyed by a SeedSequence
built from (seed, stream...). Trial i draws its failures from stream (i, 0)
and its edges from stream (i, 1), so results do not depend on the order in
which trials run. Draws are taken in canonical neuron order (layer, index)
and canonical edge order (target, child, source). Bernoulli draws with a
rational probability p/q compare a uniform integer in [0, q) against p, so
inclusion probabilities are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from ._rational import as_rational, fmt, int_threshold
from .detailed_nets import (EdgeSet, FailurePattern, MultiRepAssignment,
                            check_E_constraint, check_F_constraint, rep_edge_pairs)
from .engine import NeuronId
from .errors import ParameterError
from .hierarchy import ConceptHierarchy

PRNG_NAME = "numpy.random.PCG64 seeded via SeedSequence(seed, spawn_key=stream)"
REFERENCE_LABEL = "reference, not paper-exact: multiplicative Chernoff lower tail exp(-zeta^2*p*m/2)"


@dataclass(frozen=True)
class SamplerParams:
    q: Fraction
    zeta: Fraction
    alpha: Fraction = Fraction(1)
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        q, zeta, alpha = (as_rational(v, n) for v, n in
                          ((self.q, "q"), (self.zeta, "zeta"), (self.alpha, "alpha")))
        if not 0 <= q < 1:
            raise ParameterError(f"q must lie in [0, 1), got {q}")
        if not 0 < zeta < 1:
            raise ParameterError(f"zeta must lie in (0, 1), got {zeta}")
        if not 0 < alpha <= 1:
            raise ParameterError(f"alpha must lie in (0, 1], got {alpha}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ParameterError(f"trials must be a positive integer, got {self.trials!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        for name, v in (("q", q), ("zeta", zeta), ("alpha", alpha)):
            object.__setattr__(self, name, v)

    @property
    def p(self) -> Fraction:
        return 1 - self.q

    @property
    def epsilon(self) -> Fraction:
        return epsilon_from(self.q, self.zeta)


def epsilon_from(q, zeta) -> Fraction:
    """1 - (1-q)(1-zeta): the slack left after failures and concentration loss."""
    q, zeta = as_rational(q, "q"), as_rational(zeta, "zeta")
    if not (0 <= q <= 1 and 0 <= zeta <= 1):
        raise ParameterError(f"q and zeta must lie in [0, 1], got {q}, {zeta}")
    return 1 - (1 - q) * (1 - zeta)


def generator(seed: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def _bernoulli(rng: np.random.Generator, prob: Fraction, size: int) -> np.ndarray:
    if prob.denominator > 2 ** 62:
        raise ParameterError(f"probability {prob} has a denominator above 2**62")
    if prob == 0:
        return np.zeros(size, dtype=bool)
    return rng.integers(0, prob.denominator, size=size, dtype=np.int64) < prob.numerator


def sample_failures(neurons: Iterable[NeuronId], q, seed: int, stream: tuple[int, ...] = ()) -> FailurePattern:
    """Each neuron fails independently with probability q."""
    q = as_rational(q, "q")
    if not 0 <= q < 1:
        raise ParameterError(f"q must lie in [0, 1), got {q}")
    order = sorted(NeuronId(*u) for u in neurons)
    hit = _bernoulli(generator(seed, stream), q, len(order))
    return FailurePattern(frozenset(u for u, x in zip(order, hit) if x))


def sample_connectivity(assign: MultiRepAssignment, h: ConceptHierarchy, alpha, seed: int,
                        stream: tuple[int, ...] = ()) -> EdgeSet:
    """Each child-rep -> parent-rep edge is present independently with probability alpha."""
    alpha = as_rational(alpha, "alpha")
    if not 0 <= alpha <= 1:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    pairs = list(rep_edge_pairs(assign, h))
    if alpha == 1:
        return EdgeSet(frozenset(pairs))
    hit = _bernoulli(generator(seed, stream), alpha, len(pairs))
    return EdgeSet(frozenset(p for p, x in zip(pairs, hit) if x))


def rep_neurons(assign: MultiRepAssignment) -> list[NeuronId]:
    return sorted(v for vs in assign.reps.values() for v in vs)


def max_losses(m: int, epsilon) -> int:
    """Largest number of failed reps per concept that keeps m*(1-eps) survivors."""
    return m - int_threshold(m * (1 - as_rational(epsilon, "epsilon")))


def random_valid_failures(assign: MultiRepAssignment, h: ConceptHierarchy, epsilon, seed: int,
                          stream: tuple[int, ...] = ()) -> FailurePattern:
    """A failure pattern that satisfies the survival bound by construction.

    For each concept in canonical order, draw a loss count uniformly from
    0..max_losses and fail that many reps chosen uniformly at random.
    """
    rng = generator(seed, stream)
    m = assign.m
    top = max_losses(m, epsilon)
    F = set()
    for c in h.concepts():
        n = int(rng.integers(0, top + 1))
        for j in rng.choice(m, size=n, replace=False):
            F.add(assign.reps[c][int(j)])
    return FailurePattern(frozenset(F))


def maximal_valid_failures(assign: MultiRepAssignment, h: ConceptHierarchy, epsilon,
                           seed: int | None = None) -> FailurePattern:
    """Every concept loses exactly max_losses reps: the survival bound is met with no slack.

    Without a seed the lowest-indexed reps fail; with one, the failed reps are random.
    """
    m = assign.m
    top = max_losses(m, epsilon)
    rng = None if seed is None else generator(seed)
    F = set()
    for c in h.concepts():
        picks = range(top) if rng is None else rng.choice(m, size=top, replace=False)
        F.update(assign.reps[c][int(j)] for j in picks)
    return FailurePattern(frozenset(F))


def random_valid_edges(assign: MultiRepAssignment, h: ConceptHierarchy, F: FailurePattern, a, epsilon,
                       seed: int, stream: tuple[int, ...] = ()) -> EdgeSet:
    """An edge set meeting the connectivity bound for ``F`` by construction.

    For every parent rep v and child c', connect ceil(a*m*(1-eps)) surviving
    reps of c' chosen at random, then add each remaining rep of c' with
    probability 1/2. Requires F to satisfy the survival bound.
    """
    rng = generator(seed, stream)
    m = assign.m
    need = int_threshold(as_rational(a, "a") * m * (1 - as_rational(epsilon, "epsilon")))
    E = set()
    for c in h.concepts():
        if c.level == 0:
            continue
        kids = sorted(h.children[c])
        for v in assign.reps[c]:
            for kid in kids:
                reps = assign.reps[kid]
                alive = [u for u in reps if u not in F.F]
                if len(alive) < need:
                    raise ParameterError(f"concept {kid} has {len(alive)} survivors, cannot connect {need}")
                chosen = {alive[int(j)] for j in rng.choice(len(alive), size=need, replace=False)}
                extra = rng.integers(0, 2, size=m).astype(bool)
                chosen.update(u for u, x in zip(reps, extra) if x)
                E.update((u, v) for u in chosen)
    return EdgeSet(frozenset(E))


def iter_failure_samples(assign: MultiRepAssignment, q, seed: int, trials: int
                         ) -> Iterator[tuple[int, FailurePattern]]:
    neurons = rep_neurons(assign)
    for t in range(trials):
        yield t, sample_failures(neurons, q, seed, (t, 0))


@dataclass(frozen=True)
class ExperimentReport:
    params: SamplerParams
    which: str
    m: int
    a: Fraction
    n_concepts: int
    satisfied: int
    per_trial: str

    @property
    def trials(self) -> int:
        return self.params.trials

    @property
    def fraction_satisfied(self) -> Fraction:
        return Fraction(self.satisfied, self.trials)

    @property
    def violation_fraction(self) -> Fraction:
        return 1 - self.fraction_satisfied

    @property
    def standard_error(self) -> float:
        v = float(self.violation_fraction)
        return math.sqrt(v * (1 - v) / self.trials)

    @property
    def reference_bound(self) -> float:
        p, zeta = self.params.p, self.params.zeta
        return math.exp(-float(zeta) ** 2 * float(p) * self.m / 2)

    @property
    def union_bound(self) -> float:
        return self.n_concepts * self.reference_bound

    def passing_trials(self) -> list[int]:
        return [i for i, bit in enumerate(self.per_trial) if bit == "1"]

    def to_dict(self, include_trials: bool = False) -> dict:
        p = self.params
        d = {
            "prng": PRNG_NAME,
            "seed": p.seed,
            "trials": p.trials,
            "which": self.which,
            "q": fmt(p.q), "p": fmt(p.p), "zeta": fmt(p.zeta), "epsilon": fmt(p.epsilon),
            "m": self.m,
            "n_concepts": self.n_concepts,
            "satisfied": self.satisfied,
            "fraction_satisfied": fmt(self.fraction_satisfied),
            "fraction_satisfied_decimal": f"{float(self.fraction_satisfied):.6f}",
            "violation_fraction": fmt(self.violation_fraction),
            "violation_fraction_decimal": f"{float(self.violation_fraction):.6f}",
            "standard_error": f"{self.standard_error:.6g}",
            "reference_bound": {
                "label": REFERENCE_LABEL,
                "per_concept": f"{self.reference_bound:.6g}",
                "union_over_concepts": f"{self.union_bound:.6g}",
            },
        }
        if self.which == "F-and-E":
            d.update(a=fmt(self.a), alpha=fmt(p.alpha))
        if include_trials:
            d["per_trial"] = self.per_trial
        return d


def estimate_constraint_probability(h: ConceptHierarchy, assign: MultiRepAssignment, params: SamplerParams,
                                    which: str = "F-only", a=1, m: int | None = None) -> ExperimentReport:
    """Fraction of sampled (F) or (F, E) that satisfy the constraints with eps = epsilon_from(q, zeta).

    Draws match ``sample_failures`` / ``sample_connectivity`` on streams
    (trial, 0) / (trial, 1) exactly; constraint evaluation is vectorized.
    """
    if which not in ("F-only", "F-and-E"):
        raise ParameterError(f"which must be 'F-only' or 'F-and-E', got {which!r}")
    m = assign.m if m is None else m
    if m != assign.m:
        raise ParameterError(f"m={m} does not match the assignment ({assign.m} reps per concept)")
    a = as_rational(a, "a")
    eps = params.epsilon
    neurons = rep_neurons(assign)
    pos = {u: i for i, u in enumerate(neurons)}
    concepts = list(h.concepts())
    rep_idx = np.array([[pos[u] for u in assign.reps[c]] for c in concepts], dtype=np.intp)
    need_alive = int_threshold(m * (1 - eps))
    pairs = list(rep_edge_pairs(assign, h)) if which == "F-and-E" else []
    src_idx = np.array([pos[u] for u, _ in pairs], dtype=np.intp).reshape(-1, m)
    need_conn = int_threshold(a * m * (1 - eps))

    bits = []
    for t in range(params.trials):
        failed = _bernoulli(generator(params.seed, (t, 0)), params.q, len(neurons))
        alive = ~failed
        ok = bool((alive[rep_idx].sum(axis=1) >= need_alive).all())
        if which == "F-and-E":
            if params.alpha == 1:
                conn = np.ones(len(pairs), dtype=bool)
            else:
                conn = _bernoulli(generator(params.seed, (t, 1)), params.alpha, len(pairs))
            groups = conn.reshape(-1, m) & alive[src_idx]
            ok = ok and bool((groups.sum(axis=1) >= need_conn).all())
        bits.append("1" if ok else "0")
    per_trial = "".join(bits)
    return ExperimentReport(params, which, m, a, len(concepts), per_trial.count("1"), per_trial)


def check_sample(assign, h, F, E, a, m, epsilon, which="F-only") -> bool:
    """Slow reference evaluation of one sample through the public constraint checks."""
    ok = check_F_constraint(assign, F, m, epsilon).passed
    if which == "F-and-E":
        ok = ok and check_E_constraint(assign, F, E, a, m, epsilon, h).passed
    return ok
