import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from cells import (TIED_INPUT, CellKind, CellParams, GateActivations, activate, cell_equations, cell_forward,
                   convex_prev, forget_columns, gate_layout, gate_net, lattice_forward, logistic, parse_kind,
                   split_units, unit_columns, unit_count)
from errors import ContractViolation

BOUNDED_KINDS = [CellKind.LEAKY, CellKind.LEAKY_LP, CellKind.TYPE_B, CellKind.TYPE_D, CellKind.TYPE_E]


def random_gates(kind, dim, shape, rng):
    gates = {}
    for group in gate_layout(kind, dim):
        extra = (group.width,) if group.per_dimension else ()
        gates[group.name] = rng.uniform(0.0, 1.0, size=shape + extra)
    return gates


def test_parse_kind_aliases():
    assert parse_kind('LeakyLP') is CellKind.LEAKY_LP
    assert parse_kind('lstm_stable') is CellKind.LSTM_STABLE
    assert parse_kind('typeA') is CellKind.LEAKY_LP
    assert parse_kind(CellKind.TYPE_C) is CellKind.TYPE_C
    with pytest.raises(ContractViolation):
        parse_kind('gru')


def test_gate_layouts():
    assert [g.name for g in gate_layout(CellKind.UNIT, 2)] == []
    assert [(g.name, g.width) for g in gate_layout(CellKind.LSTM, 3)] == [('iota', 1), ('phi', 3), ('omega', 1)]
    assert [g.name for g in gate_layout(CellKind.LEAKY, 1)] == ['phi', 'omega']
    assert [g.name for g in gate_layout(CellKind.LEAKY, 2)] == ['phi', 'omega', 'lambda']
    assert unit_count(CellKind.LEAKY_LP, 2) == 1 + 3 + 2
    assert unit_count(CellKind.LSTM_STABLE_REDUCED, 2) == 5
    with pytest.raises(ContractViolation):
        gate_layout(CellKind.LSTM_STABLE_REDUCED, 3)


def test_unit_columns_tile_the_net_matrix():
    columns = unit_columns(CellKind.LSTM, 2, 3)
    assert columns['cin'] == slice(0, 3)
    assert columns['iota'] == slice(3, 6)
    assert columns['phi'] == slice(6, 12)
    assert columns['omega'] == slice(12, 15)
    assert forget_columns(CellKind.LSTM, 2, 3) == slice(6, 12)
    assert forget_columns(CellKind.LSTM_NO_FORGET, 2, 3) is None


def test_gate_net_examples():
    params = CellParams.zeros(CellKind.LEAKY, 1, 1, 3)
    params.bias[:] = [0.1, 0.2, 0.3]
    assert_allclose(gate_net(params, 'omega', [1.0, 2.0, 3.0], [None]), [0.3])

    params.w_in[:, 0] = [0.0, 1.0, 0.0]
    assert_allclose(gate_net(params, 'cin', [0.0, 1.0, 0.0], [None]), [1.1])

    rng = np.random.default_rng(3)
    params = CellParams(CellKind.LEAKY, 1, 1, rng.normal(size=(3, 3)), rng.normal(size=(1, 1, 3)), rng.normal(size=3))
    x = rng.normal(size=3)
    prev = rng.normal(size=1)
    expected = x @ params.w_in[:, 1] + prev @ params.w_rec[0][:, 1] + params.bias[1]
    assert_allclose(gate_net(params, 'phi', x, [prev]), [expected], rtol=1e-15)


def test_gate_net_shape_mismatch():
    params = CellParams.zeros(CellKind.LEAKY, 1, 2, 3)
    with pytest.raises(ContractViolation):
        gate_net(params, 'phi', [1.0, 2.0], [None])
    with pytest.raises(ContractViolation):
        CellParams(CellKind.LEAKY, 1, 2, np.zeros((3, 5)), np.zeros((1, 2, 6)), np.zeros(6))


def test_activations():
    assert activate('phi', 0.0) == 0.5
    assert activate('cin', 0.0) == 0.0
    assert logistic(7.0) >= 0.999


def test_convex_prev_examples():
    assert_allclose(convex_prev([0.2, 0.8], [1.0, 0.0]), 0.2)
    assert_allclose(convex_prev([0.5, 0.5], [1.0, -1.0]), 0.0)
    assert_allclose(convex_prev([0.0, 0.0], [0.5, 0.5]), 0.5)


def test_lstm_forward_example():
    g = GateActivations(0.5, {'iota': 1.0, 'phi': [1.0, 1.0], 'omega': 1.0})
    state = cell_forward(CellKind.LSTM, g, [1.0, 1.0])
    assert_allclose(state.s, 2.5)
    assert_allclose(state.y, math.tanh(2.5))
    assert_allclose(state.y, 0.98661, atol=1e-5)


def test_leaky_forward_example():
    g = GateActivations(1.0, {'phi': 0.25, 'omega': 1.0, 'lambda': [0.5, 0.5]})
    state = cell_forward(CellKind.LEAKY, g, [0.4, -0.4])
    assert_allclose(state.s, 0.75)
    assert_allclose(state.y, math.tanh(0.75))


def test_leakylp_with_closed_second_output_gate_is_leaky():
    leaky = cell_forward(CellKind.LEAKY, GateActivations(0.3, {'phi': 0.6, 'omega': 1.0}), [0.2])
    lp = cell_forward(CellKind.LEAKY_LP, GateActivations(0.3, {'phi': 0.6, 'omega0': 1.0, 'omega1': 0.0}), [0.2])
    assert lp.s == leaky.s
    assert_allclose(lp.y, math.tanh(leaky.s))


def test_typeb_example():
    state = cell_forward(CellKind.TYPE_B, GateActivations(1.0, {'phi': 0.5}), [0.0])
    assert_allclose(state.s, 0.5)
    assert_allclose(state.y, 0.25)


def test_unit_and_noforget():
    assert cell_forward(CellKind.UNIT, GateActivations(0.3), [0.9]) == cell_forward(CellKind.UNIT, GateActivations(0.3), [None])
    state = cell_forward(CellKind.LSTM_NO_FORGET, GateActivations(0.5, {'iota': 0.5, 'omega': 1.0}), [1.0, 2.0])
    assert_allclose(state.s, 3.25)


def test_reduced_lambda_weights_sum_to_one():
    g = GateActivations(0.0, {'iota': 0.0, 'phi': 1.0, 'omega': 1.0, 'lambda': 0.3})
    state = cell_forward(CellKind.LSTM_STABLE_REDUCED, g, [1.0, -1.0])
    assert_allclose(state.s, 0.3 - 0.7)


def test_gate_kind_mismatch():
    with pytest.raises(ContractViolation):
        cell_forward(CellKind.LEAKY, GateActivations(0.5, {'phi': 0.5}), [0.0])
    with pytest.raises(ContractViolation):
        cell_forward(CellKind.LEAKY, GateActivations(0.5, {'phi': 1.5, 'omega': 0.5}), [0.0])
    with pytest.raises(ContractViolation):
        cell_forward(CellKind.LSTM, GateActivations(0.5, {'iota': 1.0, 'phi': [1.0], 'omega': 1.0}), [0.0, 0.0])


def test_stable_equals_lstm_in_one_dimension():
    rng = np.random.default_rng(0)
    s_stable = s_lstm = 0.0
    for _ in range(1000):
        iota, phi, omega = rng.uniform(0.0, 1.0, size=3)
        cin = rng.uniform(-1.0, 1.0)
        stable = cell_forward(CellKind.LSTM_STABLE, GateActivations(cin, {'iota': iota, 'phi': phi, 'omega': omega}),
                              [s_stable])
        lstm = cell_forward(CellKind.LSTM, GateActivations(cin, {'iota': iota, 'phi': [phi], 'omega': omega}),
                            [s_lstm])
        assert abs(stable.y - lstm.y) <= 1e-15
        s_stable, s_lstm = stable.s, lstm.s


@settings(max_examples=40)
@given(st.sampled_from(BOUNDED_KINDS), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_tied_kinds_keep_state_bounded(kind, dim, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(e) for e in rng.integers(1, 6, size=dim))
    cin = rng.uniform(-1.0, 1.0, size=shape)
    states, outputs = lattice_forward(kind, cin, random_gates(kind, dim, shape, rng))
    assert np.all(np.abs(states) <= 1.0 + 1e-15)
    assert np.all(np.abs(outputs) <= 1.0 + 1e-15)


def test_bounded_state_over_many_gate_fields():
    rng = np.random.default_rng(2024)
    for kind in BOUNDED_KINDS:
        for trial in range(1000):
            dim = 1 + trial % 3
            shape = (4,) * dim if dim < 3 else (3, 3, 3)
            # saturated inputs and gates near 0/1 are the hard cases
            cin = rng.choice([-1.0, 1.0], size=shape) if trial % 2 else rng.uniform(-1.0, 1.0, size=shape)
            gates = random_gates(kind, dim, shape, rng)
            states, _ = lattice_forward(kind, cin, gates)
            assert np.max(np.abs(states)) <= 1.0 + 1e-15


@pytest.mark.parametrize('kind', list(CellKind))
def test_outputs_lie_in_unit_interval(kind):
    dim = 2
    rng = np.random.default_rng(7)
    shape = (5, 5)
    cin = rng.uniform(-1.0, 1.0, size=shape)
    _, outputs = lattice_forward(kind, cin, random_gates(kind, dim, shape, rng))
    assert np.all(np.abs(outputs) <= 1.0)


def test_split_units_shapes():
    net = np.zeros((4, unit_count(CellKind.LSTM, 2) * 3))
    cin, gates = split_units(net, CellKind.LSTM, 2, 3)
    assert cin.shape == (4, 3)
    assert gates['phi'].shape == (4, 3, 2)
    assert_allclose(gates['iota'], 0.5)


def test_cell_equations_match_scalar_api():
    rng = np.random.default_rng(11)
    for kind in TIED_INPUT:
        gates = {name: value for name, value in random_gates(kind, 2, (), rng).items()}
        prev = rng.uniform(-1.0, 1.0, size=2)
        s, y = cell_equations(kind, 0.4, gates, prev)
        state = cell_forward(kind, GateActivations(0.4, gates), list(prev))
        assert_allclose([state.s, state.y], [s, y], rtol=1e-15)


@pytest.mark.parametrize('dim', [1, 2])
def test_typec_with_open_fourth_gate_is_leakylp(dim):
    rng = np.random.default_rng(40 + dim)
    shape = (6,) * dim
    for _ in range(20):
        cin = rng.uniform(-1.0, 1.0, size=shape)
        lp = random_gates(CellKind.LEAKY_LP, dim, shape, rng)
        typec = {'phi': lp['phi'], 'gamma2': lp['omega0'], 'gamma3': lp['omega1'], 'gamma4': np.ones(shape)}
        if dim > 1:
            typec['lambda'] = lp['lambda']
        s_lp, y_lp = lattice_forward(CellKind.LEAKY_LP, cin, lp)
        s_c, y_c = lattice_forward(CellKind.TYPE_C, cin, typec)
        assert_allclose(s_c, s_lp, rtol=1e-15, atol=0.0)
        assert_allclose(y_c, y_lp, rtol=1e-15, atol=0.0)


def open_gates(kind, shape):
    gates = {}
    for group in gate_layout(kind, len(shape)):
        extra = (group.width,) if group.per_dimension else ()
        gates[group.name] = np.ones(shape + extra)
    return gates


@pytest.mark.parametrize('kind', [CellKind.LSTM, CellKind.LSTM_NO_FORGET])
def test_open_lstm_state_grows_along_every_axis(kind):
    shape = (8, 8)
    states, _ = lattice_forward(kind, np.full(shape, 0.5), open_gates(kind, shape))
    assert np.all(np.diff(states, axis=0) > 0.0)
    assert np.all(np.diff(states, axis=1) > 0.0)
    assert states[-1, -1] > 1.0


def test_leaky_state_stays_bounded_under_constant_drive():
    shape = (8, 8)
    gates = {'phi': np.full(shape, 0.9), 'omega': np.ones(shape), 'lambda': np.full(shape + (2,), 0.5)}
    states, _ = lattice_forward(CellKind.LEAKY, np.ones(shape), gates)
    assert np.all(np.abs(states) <= 1.0 + 1e-15)
