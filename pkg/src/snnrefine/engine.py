"""Layered feed-forward threshold networks with initial stopping failures.

Neurons are arranged in layers ``0 .. l_prime_max``; layer 0 holds the input
neurons. Each neuron at layer l >= 1 has a binary weight vector over layer
l-1. At time t >= 1 a non-failed neuron fires iff the dot product of its
weights with the previous layer's time t-1 firing is at least ``tau``. Input
neurons fire only at time 0, as set by the presentation. Failed neurons never
fire.

Weights are binary, so potentials are integers. The exact rational
comparison ``pot >= tau`` is therefore the integer comparison
``pot >= ceil(tau)``. This lets traces be computed in batches with numpy
without giving up exactness at the threshold boundary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from ._rational import as_rational, fmt, int_threshold
from .errors import ContractError, ParameterError


class NeuronId(NamedTuple):
    layer: int
    index: int

    def __str__(self) -> str:
        return f"{self.layer}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "NeuronId":
        try:
            layer, idx = text.split(":")
            return cls(int(layer), int(idx))
        except ValueError as exc:
            raise ParameterError(f"malformed neuron id {text!r}; expected 'layer:index'") from exc


@dataclass(frozen=True)
class NetworkConfig:
    l_prime_max: int
    widths: tuple[int, ...]
    tau: Fraction

    def __post_init__(self):
        if not isinstance(self.l_prime_max, int) or self.l_prime_max < 1:
            raise ParameterError(f"l_prime_max must be a positive integer, got {self.l_prime_max!r}")
        widths = tuple(int(w) for w in self.widths)
        if len(widths) != self.l_prime_max + 1:
            raise ParameterError(f"need {self.l_prime_max + 1} layer widths, got {len(widths)}")
        if any(w < 1 for w in widths):
            raise ParameterError(f"all widths must be >= 1, got {widths}")
        tau = as_rational(self.tau, "tau")
        if tau < 0:
            raise ParameterError(f"tau must be >= 0, got {tau}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "tau", tau)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Flat position of the first neuron of each layer."""
        out, acc = [], 0
        for w in self.widths:
            out.append(acc)
            acc += w
        return tuple(out)

    @property
    def size(self) -> int:
        return sum(self.widths)

    def flat(self, v: NeuronId) -> int:
        if not (0 <= v[0] <= self.l_prime_max and 0 <= v[1] < self.widths[v[0]]):
            raise ContractError(f"neuron {NeuronId(*v)} is not in the network")
        return self.offsets[v[0]] + v[1]

    def neurons(self) -> Iterable[NeuronId]:
        for layer, w in enumerate(self.widths):
            for i in range(w):
                yield NeuronId(layer, i)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """An immutable layered threshold network.

    ``weights[l - 1]`` is the 0/1 matrix of shape (widths[l], widths[l-1])
    holding the incoming weights of layer-l neurons.
    """

    config: NetworkConfig
    weights: tuple[np.ndarray, ...]
    failed: frozenset[NeuronId] = frozenset()
    alive: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.config
        if len(self.weights) != cfg.l_prime_max:
            raise ParameterError(f"need {cfg.l_prime_max} weight matrices, got {len(self.weights)}")
        ws = []
        for layer, W in enumerate(self.weights, start=1):
            W = np.array(W, dtype=np.int8)
            if W.shape != (cfg.widths[layer], cfg.widths[layer - 1]):
                raise ParameterError(
                    f"layer {layer} weights have shape {W.shape}, "
                    f"expected {(cfg.widths[layer], cfg.widths[layer - 1])}")
            if not np.isin(W, (0, 1)).all():
                raise ParameterError(f"layer {layer} weights must be 0/1")
            ws.append(_frozen(W))
        object.__setattr__(self, "weights", tuple(ws))
        failed = frozenset(NeuronId(*u) for u in self.failed)
        alive = np.ones(cfg.size, dtype=bool)
        for u in failed:
            alive[cfg.flat(u)] = False
        object.__setattr__(self, "failed", failed)
        object.__setattr__(self, "alive", _frozen(alive))

    @property
    def tau(self) -> Fraction:
        return self.config.tau

    def _float_weights(self) -> tuple[np.ndarray, ...]:
        cached = self.__dict__.get("_wf")
        if cached is None:
            cached = tuple(np.ascontiguousarray(W.T, dtype=np.float64) for W in self.weights)
            self.__dict__["_wf"] = cached
        return cached

    def weight(self, v: NeuronId) -> np.ndarray:
        if v[0] < 1:
            raise ContractError(f"input neuron {NeuronId(*v)} has no weight vector")
        self.config.flat(v)
        return self.weights[v[0] - 1][v[1]]

    def edges(self) -> list[tuple[NeuronId, NeuronId]]:
        """All weight-1 edges as (source, target), in canonical order."""
        out = []
        for layer, W in enumerate(self.weights, start=1):
            for i, j in zip(*np.nonzero(W)):
                out.append((NeuronId(layer - 1, int(j)), NeuronId(layer, int(i))))
        return out

    def with_failed(self, failed: Iterable[NeuronId]) -> "Network":
        return Network(self.config, self.weights, frozenset(failed))

    def with_tau(self, tau) -> "Network":
        cfg = NetworkConfig(self.config.l_prime_max, self.config.widths, tau)
        return Network(cfg, self.weights, self.failed)

    def to_dict(self) -> dict:
        return {
            "l_prime_max": self.config.l_prime_max,
            "widths": list(self.config.widths),
            "tau": fmt(self.tau),
            "edges": [[str(u), str(v)] for u, v in self.edges()],
            "failed": [str(u) for u in sorted(self.failed)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d) -> "Network":
        cfg = NetworkConfig(d["l_prime_max"], tuple(d["widths"]), d["tau"])
        ws = [np.zeros((cfg.widths[l], cfg.widths[l - 1]), dtype=np.int8)
              for l in range(1, cfg.l_prime_max + 1)]
        for su, sv in d["edges"]:
            u, v = NeuronId.parse(su), NeuronId.parse(sv)
            if v.layer != u.layer + 1:
                raise ParameterError(f"edge {u}->{v} does not connect successive layers")
            ws[v.layer - 1][v.index, u.index] = 1
        return cls(cfg, tuple(ws), frozenset(NeuronId.parse(s) for s in d["failed"]))


@dataclass(frozen=True)
class Presentation:
    fire_at_zero: frozenset[NeuronId]

    def __post_init__(self):
        object.__setattr__(self, "fire_at_zero", frozenset(NeuronId(*u) for u in self.fire_at_zero))
        bad = [u for u in self.fire_at_zero if u.layer != 0]
        if bad:
            raise ContractError(f"presentation contains non-input neurons: {sorted(bad)}")


@dataclass(frozen=True, eq=False)
class ExecutionTrace:
    """Firing matrix of one execution: ``firing[t, flat(v)]`` for t in 0..l_prime_max."""

    config: NetworkConfig
    firing: np.ndarray

    def fires(self, t: int, v: NeuronId) -> bool:
        return bool(self.firing[t, self.config.flat(v)])

    def layer_at(self, t: int, layer: int) -> np.ndarray:
        off = self.config.offsets[layer]
        return self.firing[t, off:off + self.config.widths[layer]]

    def firing_at(self, t: int) -> list[NeuronId]:
        out = []
        for layer, w in enumerate(self.config.widths):
            off = self.config.offsets[layer]
            out.extend(NeuronId(layer, int(i)) for i in np.flatnonzero(self.firing[t, off:off + w]))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExecutionTrace):
            return NotImplemented
        return self.config.widths == other.config.widths and np.array_equal(self.firing, other.firing)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"times": [[str(v) for v in self.firing_at(t)] for t in range(self.firing.shape[0])]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"


@dataclass(frozen=True, eq=False)
class TraceBatch:
    """Traces of one network over many presentations, shape (n, l_prime_max+1, size)."""

    config: NetworkConfig
    firing: np.ndarray

    def __len__(self) -> int:
        return self.firing.shape[0]

    def __getitem__(self, i: int) -> ExecutionTrace:
        return ExecutionTrace(self.config, self.firing[i])

    def at_level(self, flat_index: np.ndarray, level: np.ndarray) -> np.ndarray:
        """Gather ``firing[:, level[j...], flat_index[j...]]`` for index arrays of equal shape."""
        return self.firing[:, level, flat_index]


def fires(potential, tau) -> bool:
    """Activation rule: fire iff potential >= tau (non-strict, exact)."""
    return as_rational(potential, "potential") >= as_rational(tau, "tau")


def potential(net: Network, v: NeuronId, prev_firing: Sequence[bool]) -> Fraction:
    """Dot product of ``v``'s weight vector with the firing of layer(v)-1."""
    w = net.weight(v)
    x = np.asarray(prev_firing, dtype=np.int64)
    if x.shape != w.shape:
        raise ContractError(f"prev_firing has length {x.shape}, expected {w.shape}")
    return Fraction(int(w.astype(np.int64) @ x))


def step(net: Network, prev: np.ndarray) -> np.ndarray:
    """One synchronous transition: full firing vector at t-1 -> at t (t >= 1)."""
    prev = np.asarray(prev, dtype=bool)
    if prev.shape != (net.config.size,):
        raise ContractError(f"firing vector has shape {prev.shape}, expected ({net.config.size},)")
    return _step_batch(net, prev[None, :])[0]


def _step_batch(net: Network, prev: np.ndarray) -> np.ndarray:
    cfg = net.config
    need = int_threshold(cfg.tau)
    nxt = np.zeros_like(prev, dtype=bool)
    offs = cfg.offsets
    wf = net._float_weights()
    for layer in range(1, cfg.l_prime_max + 1):
        lo, hi = offs[layer - 1], offs[layer - 1] + cfg.widths[layer - 1]
        # float64 BLAS product is exact here: entries are 0/1 and sums stay far below 2**53
        pot = prev[:, lo:hi].astype(np.float64) @ wf[layer - 1]
        nxt[:, offs[layer]:offs[layer] + cfg.widths[layer]] = pot >= need
    nxt &= net.alive
    return nxt


def execute_batch(net: Network, inputs: np.ndarray) -> TraceBatch:
    """Run the network once per row of ``inputs`` (shape (n, widths[0]), layer-0 firing at time 0)."""
    cfg = net.config
    inputs = np.asarray(inputs, dtype=bool)
    if inputs.ndim != 2 or inputs.shape[1] != cfg.widths[0]:
        raise ContractError(f"inputs must have shape (n, {cfg.widths[0]}), got {inputs.shape}")
    if (inputs & ~net.alive[:cfg.widths[0]]).any():
        raise ContractError("presentation fires a failed input neuron")
    n = inputs.shape[0]
    firing = np.zeros((n, cfg.l_prime_max + 1, cfg.size), dtype=bool)
    firing[:, 0, :cfg.widths[0]] = inputs
    for t in range(1, cfg.l_prime_max + 1):
        firing[:, t] = _step_batch(net, firing[:, t - 1])
    return TraceBatch(cfg, _frozen(firing))


def execute(net: Network, p: Presentation) -> ExecutionTrace:
    row = np.zeros((1, net.config.widths[0]), dtype=bool)
    for u in p.fire_at_zero:
        row[0, net.config.flat(u)] = True
    return execute_batch(net, row)[0]
