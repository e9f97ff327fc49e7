import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from errors import ContractViolation
from lattice import (all_directions, count_paths, iter_paths, orient, orient_coord, predecessors, scan_order,
                     wavefront_plan)


def test_predecessors_at_boundary():
    assert predecessors((0, 3), (1, 1), (4, 4)) == [None, (0, 2)]


def test_predecessors_interior():
    assert predecessors((2, 2), (1, 1), (4, 4)) == [(1, 2), (2, 1)]


def test_predecessors_reversed_direction():
    assert predecessors((0, 0), (-1, -1), (3, 3)) == [(1, 0), (0, 1)]


def test_predecessors_dimension_mismatch():
    with pytest.raises(ContractViolation):
        predecessors((0, 0), (1,), (3, 3))
    with pytest.raises(ContractViolation):
        predecessors((0, 0, 0), (1, 1), (3, 3))


def test_scan_order_examples():
    assert scan_order((2, 2), (1, 1)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert scan_order((2, 2), (-1, 1)) == [(1, 0), (1, 1), (0, 0), (0, 1)]
    assert scan_order((3,), (1,)) == [(0,), (1,), (2,)]


@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.data())
def test_scan_order_visits_predecessors_first(shape, data):
    direction = data.draw(st.sampled_from(all_directions(len(shape))))
    order = scan_order(shape, direction)
    assert len(order) == int(np.prod(shape))
    seen = set()
    for p in order:
        for q in predecessors(p, direction, shape):
            assert q is None or q in seen
        seen.add(p)


def test_all_directions():
    assert all_directions(1) == [(1,), (-1,)]
    assert len(all_directions(3)) == 8
    assert all_directions(2)[0] == (1, 1)


def test_count_paths_examples():
    assert count_paths((0, 0), (0, 0)) == 1
    assert count_paths((1, 0), (0, 5)) == 0
    assert count_paths((0, 0), (2, 2)) == 6
    assert count_paths((0, 0), (5, 5)) == 252


@settings(max_examples=30)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=3))
def test_count_paths_matches_enumeration(steps):
    p = (0,) * len(steps)
    paths = list(iter_paths(p, tuple(steps)))
    assert len(paths) == count_paths(p, steps)
    for path in paths:
        assert path[0] == p and path[-1] == tuple(steps)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 6)), min_size=1, max_size=3))
def test_count_paths_satisfies_pascal_recurrence(axes):
    p = tuple(a for a, _ in axes)
    q = tuple(a + k for a, k in axes)
    assume(q != p)
    below = sum(count_paths(p, q[:d] + (q[d] - 1,) + q[d + 1:]) for d in range(len(q)))
    assert count_paths(p, q) == below


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 4)), min_size=1, max_size=3))
def test_count_paths_matches_enumeration_away_from_origin(axes):
    p = tuple(a for a, _ in axes)
    q = tuple(a + k for a, k in axes)
    expected = count_paths(p, q)
    assume(expected <= 10_000)
    paths = [tuple(path) for path in iter_paths(p, q)]
    assert len(paths) == expected
    assert len(set(paths)) == expected
    for path in paths:
        assert path[0] == p and path[-1] == q
        for a, b in zip(path, path[1:]):
            assert sorted(j - i for i, j in zip(a, b)) == [0] * (len(p) - 1) + [1]


def test_count_paths_is_exact_for_large_offsets():
    # 60 choose 30 does not fit a float mantissa
    assert count_paths((0, 0), (30, 30)) == 118264581564861424


def test_orient_is_an_involution():
    array = np.arange(12.0).reshape(3, 4)
    for direction in all_directions(2):
        np.testing.assert_array_equal(orient(orient(array, direction), direction), array)
    assert orient_coord((0, 1), (-1, 1), (3, 4)) == (2, 1)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3))
def test_wavefront_plan_covers_lattice_once(shape):
    plan = wavefront_plan(shape)
    positions = np.concatenate([wave.positions for wave in plan])
    assert sorted(positions.tolist()) == list(range(int(np.prod(shape))))
    assert len(plan) == sum(e - 1 for e in shape) + 1
    for k, wave in enumerate(plan):
        if k == 0:
            assert np.all(wave.predecessors == -1)
            continue
        previous = plan[k - 1].positions
        present = wave.predecessors >= 0
        np.testing.assert_array_equal(previous[wave.predecessors[present]], wave.flat_predecessors[present])
