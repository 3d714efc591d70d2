"""Concept hierarchies: construction, validation, queries and the support relation.

A hierarchy is a forest with ``k`` roots at level ``l_max``. Every concept
above level 0 has exactly ``k`` children one level down, and children sets of
distinct same-level concepts are disjoint. The canonical layout gives concept
``(l, i)`` the children ``(l-1, i*k) .. (l-1, i*k + k - 1)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from ._rational import as_rational, int_threshold
from .errors import ParameterError, QueryError


class ConceptId(NamedTuple):
    level: int
    index: int

    def __str__(self) -> str:
        return f"{self.level}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "ConceptId":
        try:
            lvl, idx = text.split(":")
            return cls(int(lvl), int(idx))
        except ValueError as exc:
            raise QueryError(f"malformed concept id {text!r}; expected 'level:index'") from exc


@dataclass(frozen=True)
class HierarchyParams:
    l_max: int
    k: int
    n: int | None = None  # size of D_0; defaults to |C_0| = k**(l_max+1)

    def __post_init__(self):
        for name in ("l_max", "k"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        leaves = self.k ** (self.l_max + 1)
        if self.n is None:
            object.__setattr__(self, "n", leaves)
        elif not isinstance(self.n, int) or self.n < leaves:
            raise ParameterError(f"n must be an integer >= k**(l_max+1) = {leaves}, got {self.n!r}")

    def level_size(self, level: int) -> int:
        return self.k ** (self.l_max - level + 1)


@dataclass(frozen=True, eq=False)
class ConceptHierarchy:
    params: HierarchyParams
    levels: tuple[tuple[ConceptId, ...], ...]
    children: Mapping[ConceptId, frozenset[ConceptId]]
    _parent: Mapping[ConceptId, ConceptId] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "children", MappingProxyType(dict(self.children)))
        parent = {}
        for c, kids in self.children.items():
            for kid in kids:
                parent.setdefault(kid, c)
        object.__setattr__(self, "_parent", MappingProxyType(parent))

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def l_max(self) -> int:
        return self.params.l_max

    @property
    def leaves_c0(self) -> tuple[ConceptId, ...]:
        return self.levels[0]

    def concepts(self) -> Iterable[ConceptId]:
        """All concepts, level by level, in index order."""
        for lvl in self.levels:
            yield from lvl

    def __contains__(self, c) -> bool:
        return (
            isinstance(c, tuple) and len(c) == 2
            and 0 <= c[0] < len(self.levels) and c in self._index_of_level(c[0])
        )

    def _index_of_level(self, level: int) -> frozenset:
        cache = self.__dict__.setdefault("_level_sets", {})
        if level not in cache:
            cache[level] = frozenset(self.levels[level])
        return cache[level]

    def children_of(self, c: ConceptId) -> frozenset[ConceptId]:
        if c not in self:
            raise QueryError(f"unknown concept {c}")
        return self.children.get(c, frozenset())

    def parent_of(self, c: ConceptId) -> ConceptId | None:
        return self._parent.get(c)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConceptHierarchy):
            return NotImplemented
        return (self.params == other.params and self.levels == other.levels
                and dict(self.children) == dict(other.children))

    def __hash__(self) -> int:
        return hash((self.params, self.levels))

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "l_max": self.l_max,
            "k": self.k,
            "levels": [[str(c) for c in lvl] for lvl in self.levels],
            "children": {
                str(c): [str(x) for x in sorted(self.children[c])]
                for c in self.concepts() if c in self.children
            },
        }
        if self.params.n != self.k ** (self.l_max + 1):
            d["n"] = self.params.n
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConceptHierarchy":
        params = HierarchyParams(l_max=d["l_max"], k=d["k"], n=d.get("n"))
        levels = tuple(tuple(ConceptId.parse(s) for s in lvl) for lvl in d["levels"])
        children = {
            ConceptId.parse(p): frozenset(ConceptId.parse(s) for s in kids)
            for p, kids in d["children"].items()
        }
        return cls(params, levels, children)

    @classmethod
    def from_json(cls, text: str) -> "ConceptHierarchy":
        return cls.from_dict(json.loads(text))


def build_uniform_hierarchy(params: HierarchyParams) -> ConceptHierarchy:
    k = params.k
    levels = tuple(
        tuple(ConceptId(lvl, i) for i in range(params.level_size(lvl)))
        for lvl in range(params.l_max + 1)
    )
    children = {
        c: frozenset(ConceptId(c.level - 1, c.index * k + j) for j in range(k))
        for lvl in levels[1:] for c in lvl
    }
    return ConceptHierarchy(params, levels, children)


@dataclass(frozen=True)
class ValidationReport:
    failures: Mapping[str, tuple[str, ...]]

    CHECKS = ("top_level_size", "branching", "disjoint_children", "level_consistency")

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())

    def failed_checks(self) -> list[str]:
        return [name for name in self.CHECKS if self.failures.get(name)]


def validate_hierarchy(h: ConceptHierarchy) -> ValidationReport:
    """Check the structural properties of a concept hierarchy.

    ``top_level_size``: exactly k concepts at level l_max.
    ``branching``: each concept above level 0 has exactly k children.
    ``disjoint_children``: no concept is a child of two same-level concepts.
    ``level_consistency``: every child sits exactly one level below its parent,
    and every level-0 concept has no children.
    """
    k, l_max = h.k, h.l_max
    out: dict[str, list[str]] = {name: [] for name in ValidationReport.CHECKS}

    if len(h.levels) != l_max + 1:
        out["level_consistency"].append(f"expected {l_max + 1} levels, found {len(h.levels)}")
    elif len(h.levels[l_max]) != k:
        out["top_level_size"].append(f"|C_{l_max}| = {len(h.levels[l_max])}, expected {k}")

    for lvl_no, lvl in enumerate(h.levels):
        for c in lvl:
            if c.level != lvl_no:
                out["level_consistency"].append(f"{c} listed at level {lvl_no}")
            kids = h.children.get(c, frozenset())
            if lvl_no == 0:
                if kids:
                    out["level_consistency"].append(f"level-0 concept {c} has children")
                continue
            if len(kids) != k:
                out["branching"].append(f"{c} has {len(kids)} children, expected {k}")
            for kid in kids:
                if kid.level != lvl_no - 1 or kid not in h:
                    out["level_consistency"].append(f"child {kid} of {c} is not a level-{lvl_no - 1} concept")

    owner: dict[ConceptId, ConceptId] = {}
    for c in sorted(h.children):
        for kid in sorted(h.children[c]):
            if kid in owner and owner[kid] != c:
                out["disjoint_children"].append(f"{kid} is a child of both {owner[kid]} and {c}")
            owner.setdefault(kid, c)

    return ValidationReport({name: tuple(v) for name, v in out.items()})


def descendants(h: ConceptHierarchy, c: ConceptId) -> frozenset[ConceptId]:
    """Reflexive-transitive closure of ``children`` starting at ``c``."""
    if c not in h:
        raise QueryError(f"unknown concept {c}")
    seen = {c}
    frontier = [c]
    while frontier:
        nxt = []
        for x in frontier:
            for kid in h.children.get(x, ()):
                if kid not in seen:
                    seen.add(kid)
                    nxt.append(kid)
        frontier = nxt
    return frozenset(seen)


def leaves(h: ConceptHierarchy, c: ConceptId) -> frozenset[ConceptId]:
    return frozenset(x for x in descendants(h, c) if x.level == 0)


@dataclass(frozen=True)
class SupportQuery:
    B: frozenset[ConceptId]
    r: Fraction

    def __post_init__(self):
        object.__setattr__(self, "B", frozenset(self.B))
        r = as_rational(self.r, "r")
        if not 0 <= r <= 1:
            raise ParameterError(f"r must lie in [0, 1], got {r}")
        object.__setattr__(self, "r", r)


def check_level0_subset(h: ConceptHierarchy, B: Iterable[ConceptId]) -> frozenset[ConceptId]:
    B = frozenset(B)
    bad = sorted(b for b in B if not (isinstance(b, tuple) and b in h and b[0] == 0))
    if bad:
        raise QueryError("B must contain only level-0 concepts of the hierarchy; offending: "
                         + ", ".join(str(ConceptId(*b)) if isinstance(b, tuple) else repr(b) for b in bad))
    return B


def support(h: ConceptHierarchy, q: SupportQuery) -> frozenset[ConceptId]:
    """The set of concepts r-supported by ``q.B``.

    Level 0: B itself. Level l >= 1: concepts with at least r*k supported
    children at level l-1. The comparison is done in exact arithmetic.
    """
    B = check_level0_subset(h, q.B)
    need = q.r * h.k
    supported = set(B)
    current = B
    for lvl in h.levels[1:]:
        current = frozenset(c for c in lvl if len(h.children[c] & current) >= need)
        supported |= current
    return frozenset(supported)


# -- batched support, used by the verification sweeps ----------------------

def leaf_index(h: ConceptHierarchy) -> dict[ConceptId, int]:
    return {c: i for i, c in enumerate(h.leaves_c0)}


def masks_to_sets(h: ConceptHierarchy, masks: np.ndarray) -> list[frozenset[ConceptId]]:
    leaves0 = h.leaves_c0
    return [frozenset(leaves0[j] for j in np.flatnonzero(row)) for row in masks]


def sets_to_masks(h: ConceptHierarchy, sets: Iterable[Iterable[ConceptId]]) -> np.ndarray:
    idx = leaf_index(h)
    sets = [check_level0_subset(h, s) for s in sets]
    out = np.zeros((len(sets), len(idx)), dtype=bool)
    for row, s in enumerate(sets):
        for b in s:
            out[row, idx[b]] = True
    return out


def position_maps(h: ConceptHierarchy) -> list[dict[ConceptId, int]]:
    """Per level, the position of each concept within ``h.levels[level]``."""
    return [{c: i for i, c in enumerate(lvl)} for lvl in h.levels]


def child_incidence(h: ConceptHierarchy, level: int) -> np.ndarray:
    """0/1 matrix of shape (|C_{level-1}|, |C_level|); [j, i] = 1 iff child j of parent i."""
    pos_below = position_maps(h)[level - 1]
    M = np.zeros((len(h.levels[level - 1]), len(h.levels[level])), dtype=np.int64)
    for i, c in enumerate(h.levels[level]):
        for kid in h.children.get(c, ()):
            M[pos_below[kid], i] = 1
    return M


def support_table(h: ConceptHierarchy, masks: np.ndarray, r) -> list[np.ndarray]:
    """Vectorized support over a batch of input sets.

    ``masks`` has shape (n_inputs, |C_0|), columns in ``h.levels[0]`` order.
    Returns one boolean array per level, shape (n_inputs, |C_level|); entry
    [b, i] says whether ``h.levels[level][i]`` is r-supported by input b.
    Child counts are integers, so ``count >= r*k`` is evaluated exactly as
    ``count >= ceil(r*k)``.
    """
    r = as_rational(r, "r")
    need = int_threshold(r * h.k)
    out = [np.asarray(masks, dtype=bool)]
    for lvl in range(1, h.l_max + 1):
        counts = out[-1].astype(np.int64) @ child_incidence(h, lvl)
        out.append(counts >= need)
    return out


def is_canonical(h: ConceptHierarchy) -> bool:
    return h == build_uniform_hierarchy(h.params)
