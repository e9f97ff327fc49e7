import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from autodiff import Tape, finite_diff_check, grad_full, truncated_jacobian_matrix, truncated_state_jacobian
from cells import CellKind, gate_layout, recurrence_coefficients
from errors import DivergedRunError
from lattice import count_paths, iter_paths


def lstm_field(shape, phi, iota=0.5, omega=0.5):
    dim = len(shape)
    return {'iota': np.full(shape, iota), 'phi': np.full(shape + (dim,), phi), 'omega': np.full(shape, omega)}


def test_tanh_square_has_zero_slope_at_origin():
    loss, (grad,) = grad_full(lambda tape, x: tape.tanh(x) * tape.tanh(x), np.array(0.0))
    assert loss == 0.0
    assert grad == 0.0


def test_quadratic_finite_difference():
    assert finite_diff_check(lambda tape, x: x * x, np.array(3.0)) <= 1e-9


def test_constant_function():
    loss, (grad,) = grad_full(lambda tape, x: tape.constant(4.0) + 0.0 * x.sum(), np.ones(3))
    assert loss == 4.0
    np.testing.assert_array_equal(grad, np.zeros(3))
    assert finite_diff_check(lambda tape, x: 0.0 * x.sum(), np.ones(3)) == 0.0


def test_unused_variable_gets_zero_gradient():
    _, (ga, gb) = grad_full(lambda tape, a, b: (a * a).sum(), np.ones(2), np.ones((2, 2)))
    assert_allclose(ga, [2.0, 2.0])
    np.testing.assert_array_equal(gb, np.zeros((2, 2)))


def composite(tape, x):
    """Touches every tape primitive the network uses"""
    a = x[:6].reshape((2, 3))
    b = x[6:12].reshape((3, 2))
    m = tape.tanh(a @ b)                                 # (2, 2)
    p = tape.pad(tape.flip(m, [0]), ((1, 0), (0, 1)))    # (3, 3)
    g = tape.take(p, np.array([2, -1, 0]), axis=1)       # (3, 3)
    s = tape.stack([g, tape.logistic(g)], axis=0)        # (2, 3, 3)
    c = tape.concat([s, -s], axis=-1).transpose((1, 0, 2))
    lam = tape.logistic(x[12:16].reshape((2, 2)))
    mix = tape.convex(lam, x[16:20].reshape((2, 2)))
    sm = tape.softmax(x[20:24])
    picked = x[np.array([0, 0, 5])]
    return (c * c).sum() + (mix * mix).sum() + (sm * tape.constant(np.arange(4.0))).sum() + picked.sum() - x[3]


def test_composite_graph_matches_finite_differences():
    point = np.random.default_rng(0).uniform(-1.0, 1.0, size=24)
    assert finite_diff_check(composite, point, step=1e-5) <= 1e-6


def test_custom_node_uses_supplied_vjp():
    def func(tape, x):
        return tape.custom(np.sum(x.value ** 3), [x], lambda g: (3.0 * g * x.value ** 2,), 'cube')

    loss, (grad,) = grad_full(func, np.array([1.0, 2.0]))
    assert loss == 9.0
    assert_allclose(grad, [3.0, 12.0])


def test_non_finite_values_raise_with_position():
    tape = Tape()
    x = tape.variable(np.array([1e308]), name='x')
    tape.context = 'wavefront 3'
    with pytest.raises(DivergedRunError) as info:
        tape.mul(x, 10.0)
    assert 'mul' in info.value.position
    assert 'wavefront 3' in info.value.position

    with pytest.raises(DivergedRunError):
        Tape().variable([np.nan])


def test_finite_diff_subset_is_reproducible():
    point = np.linspace(-1.0, 1.0, 24)
    first = finite_diff_check(composite, point, coordinates=8, seed=5)
    second = finite_diff_check(composite, point, coordinates=8, seed=5)
    assert first == second


def test_truncated_jacobian_lstm_1d_example():
    jacobian = truncated_state_jacobian(CellKind.LSTM, lstm_field((4,), 0.5), (0,), (4,))
    assert_allclose(jacobian, [1.0, 0.5, 0.25, 0.125], rtol=0, atol=1e-15)


def test_truncated_jacobian_lstm_1d_is_product_of_forget_gates():
    rng = np.random.default_rng(1)
    for _ in range(100):
        length = int(rng.integers(2, 65))
        phi = rng.uniform(0.0, 1.0, size=(length, 1))
        field = {'iota': np.full(length, 0.5), 'phi': phi, 'omega': np.full(length, 0.5)}
        start = int(rng.integers(0, length))
        jacobian = truncated_state_jacobian(CellKind.LSTM, field, (start,), (length,))
        expected = np.concatenate([np.zeros(start), [1.0], np.cumprod(phi[start + 1:, 0])])
        assert_allclose(jacobian, expected, rtol=1e-12, atol=0)


def test_truncated_jacobian_lstm_2d_examples():
    half = truncated_state_jacobian(CellKind.LSTM, lstm_field((2, 2), 0.5), (0, 0), (2, 2))
    assert_allclose(half[1, 1], 0.5)
    ones = truncated_state_jacobian(CellKind.LSTM, lstm_field((3, 3), 1.0), (0, 0), (3, 3))
    assert ones[2, 2] == count_paths((0, 0), (2, 2)) == 6
    explode = truncated_state_jacobian(CellKind.LSTM, lstm_field((6, 6), 0.9), (0, 0), (6, 6))
    assert_allclose(explode[5, 5], 252 * 0.9 ** 10, rtol=1e-12)
    assert explode[5, 5] == pytest.approx(87.87, abs=1e-2)


def test_truncated_jacobian_reverse_direction():
    field = lstm_field((4,), 0.5)
    jacobian = truncated_state_jacobian(CellKind.LSTM, field, (3,), (4,), direction=(-1,))
    assert_allclose(jacobian, [0.125, 0.25, 0.5, 1.0])


@settings(max_examples=25)
@given(st.sampled_from([CellKind.LSTM, CellKind.LSTM_STABLE, CellKind.LEAKY, CellKind.TYPE_C]),
       st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_matrix_columns_match_single_source(kind, dim, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(e) for e in rng.integers(1, 4, size=dim))
    field = {}
    for group in gate_layout(kind, dim):
        extra = (group.width,) if group.per_dimension else ()
        field[group.name] = rng.uniform(0.0, 1.0, size=shape + extra)
    direction = tuple(int(s) for s in rng.choice([-1, 1], size=dim))
    matrix = truncated_jacobian_matrix(kind, field, shape, direction)
    source = tuple(int(rng.integers(0, e)) for e in shape)
    column = matrix[:, np.ravel_multi_index(source, shape)]
    single = truncated_state_jacobian(kind, field, source, shape, direction)
    assert_allclose(column, single.reshape(-1), rtol=1e-12, atol=1e-15)


def path_sum(coefficients, source, target):
    """Sum over monotone source-to-target paths of the product of per-step coefficients"""
    total = 0.0
    for path in iter_paths(source, target):
        product = 1.0
        for a, b in zip(path, path[1:]):
            d = next(i for i, (x, y) in enumerate(zip(a, b)) if x != y)
            product *= coefficients[b + (d,)]
        total += product
    return total


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([CellKind.LSTM, CellKind.LSTM_STABLE, CellKind.LEAKY, CellKind.LEAKY_LP, CellKind.TYPE_C,
                        CellKind.TYPE_D]),
       st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_truncated_jacobian_equals_sum_over_paths(kind, dim, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(e) for e in rng.integers(1, 5 if dim < 3 else 4, size=dim))
    field = {}
    for group in gate_layout(kind, dim):
        extra = (group.width,) if group.per_dimension else ()
        field[group.name] = rng.uniform(0.0, 1.0, size=shape + extra)
    coefficients = recurrence_coefficients(kind, field, dim, shape)
    source = tuple(int(rng.integers(0, e)) for e in shape)
    jacobian = truncated_state_jacobian(kind, field, source, shape)
    expected = np.zeros(shape)
    for target in np.ndindex(*shape):
        expected[target] = path_sum(coefficients, source, target)
    assert_allclose(jacobian, expected, rtol=1e-12, atol=1e-15)
