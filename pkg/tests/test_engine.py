from fractions import Fraction as Q

import numpy as np
import pytest

from oracles import oracle_simulate
from snnrefine.engine import (ExecutionTrace, Network, NetworkConfig, NeuronId, Presentation,
                              execute, execute_batch, fires, potential, step)
from snnrefine.errors import ContractError, ParameterError


def one_layer(weights, tau, failed=()):
    W = np.array(weights, dtype=np.int8)
    cfg = NetworkConfig(1, (W.shape[1], W.shape[0]), tau)
    return Network(cfg, (W,), frozenset(failed))


def test_potential_counts_weighted_firing():
    net = one_layer([[1, 1, 1, 1]], 1)
    assert potential(net, NeuronId(1, 0), [1, 1, 0, 1]) == 3


def test_potential_zero_weights():
    net = one_layer([[0, 0, 0, 0]], 1)
    assert potential(net, NeuronId(1, 0), [1, 1, 1, 1]) == 0


def test_potential_rejects_input_neuron():
    net = one_layer([[1, 1]], 1)
    with pytest.raises(ContractError):
        net.weight(NeuronId(0, 0))


def test_fires_boundary_is_inclusive():
    assert fires(3, 3)
    assert not fires(Q(2999, 1000), 3)
    with pytest.raises(ParameterError):
        fires(2.999, 3)


def test_failed_neuron_never_fires():
    W = np.ones((1, 100), dtype=np.int8)
    net = Network(NetworkConfig(1, (100, 1), 3), (W,), frozenset({NeuronId(1, 0)}))
    tr = execute(net, Presentation(frozenset(NeuronId(0, i) for i in range(100))))
    assert not tr.fires(1, NeuronId(1, 0))


def test_empty_presentation_silent():
    net = one_layer([[1, 1], [1, 0]], 1)
    tr = execute(net, Presentation(frozenset()))
    assert not tr.firing.any()


def test_tau_zero_all_fire():
    net = one_layer([[0, 0], [1, 0], [0, 1]], 0, failed={NeuronId(1, 2)})
    tr = execute(net, Presentation(frozenset()))
    assert tr.firing_at(1) == [NeuronId(1, 0), NeuronId(1, 1)]


def test_non_integer_tau():
    net = one_layer([[1, 1, 1]], Q(5, 2))
    ins = [NeuronId(0, 0), NeuronId(0, 1)]
    assert not execute(net, Presentation(frozenset(ins))).fires(1, NeuronId(1, 0))
    ins.append(NeuronId(0, 2))
    assert execute(net, Presentation(frozenset(ins))).fires(1, NeuronId(1, 0))


def test_inputs_fire_only_at_zero():
    net = one_layer([[1]], 1)
    tr = execute(net, Presentation(frozenset({NeuronId(0, 0)})))
    assert tr.to_dict() == {"times": [["0:0"], ["1:0"]]}


def test_presentation_layer0_only():
    with pytest.raises(ContractError):
        Presentation(frozenset({NeuronId(1, 0)}))


def test_failed_input_cannot_be_presented():
    net = one_layer([[1]], 1, failed={NeuronId(0, 0)})
    with pytest.raises(ContractError):
        execute(net, Presentation(frozenset({NeuronId(0, 0)})))


def test_step_matches_execute():
    rng = np.random.default_rng(3)
    Ws = (rng.integers(0, 2, (4, 5)).astype(np.int8), rng.integers(0, 2, (3, 4)).astype(np.int8))
    net = Network(NetworkConfig(2, (5, 4, 3), 2), Ws)
    tr = execute(net, Presentation(frozenset(NeuronId(0, i) for i in (0, 2, 3))))
    assert np.array_equal(step(net, tr.firing[0]), tr.firing[1])
    assert np.array_equal(step(net, tr.firing[1]), tr.firing[2])


def test_batch_matches_oracle_simulator():
    rng = np.random.default_rng(11)
    widths = (6, 5, 4, 3)
    Ws = tuple(rng.integers(0, 2, (widths[l], widths[l - 1])).astype(np.int8) for l in range(1, 4))
    failed = {NeuronId(1, 2), NeuronId(2, 0)}
    for tau in (Q(0), Q(1), Q(3, 2), Q(2), Q(7, 3)):
        net = Network(NetworkConfig(3, widths, tau), Ws, frozenset(failed))
        inputs = rng.integers(0, 2, (20, 6)).astype(bool)
        batch = execute_batch(net, inputs)
        for b in range(20):
            fire0 = {(0, i) for i in np.flatnonzero(inputs[b])}
            want = oracle_simulate(widths, net.edges(), failed, tau, fire0)
            got = [frozenset(tuple(v) for v in batch[b].firing_at(t)) for t in range(4)]
            assert got == want


def test_execution_is_deterministic():
    net = one_layer([[1, 0, 1], [1, 1, 1]], 2)
    p = Presentation(frozenset({NeuronId(0, 0), NeuronId(0, 2)}))
    assert execute(net, p) == execute(net, p)


def test_network_json_round_trip():
    net = one_layer([[1, 0, 1], [0, 1, 1]], Q(3, 2), failed={NeuronId(0, 1)})
    again = Network.from_dict(net.to_dict())
    assert again.to_dict() == net.to_dict()


def test_config_validation():
    with pytest.raises(ParameterError):
        NetworkConfig(1, (2,), 1)
    with pytest.raises(ParameterError):
        NetworkConfig(1, (2, 2), -1)
    with pytest.raises(ParameterError):
        Network(NetworkConfig(1, (2, 2), 1), (np.full((2, 2), 2),))
    with pytest.raises(ContractError):
        NetworkConfig(1, (2, 2), 1).flat(NeuronId(1, 5))


def test_trace_equality_checks_widths():
    a = ExecutionTrace(NetworkConfig(1, (1, 1), 1), np.zeros((2, 2), dtype=bool))
    b = ExecutionTrace(NetworkConfig(1, (2, 0 + 1), 1), np.zeros((2, 3), dtype=bool))
    assert a != b
