#!/usr/bin/env python3
"""
Lattice helpers for multi-dimensional recurrences
Coordinates, scan directions, predecessor lookup and monotone path counting
"""

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolation

Coord = Tuple[int, ...]
LatticeShape = Tuple[int, ...]
ScanDirection = Tuple[int, ...]


def _check_shape(shape: Sequence[int]) -> LatticeShape:
    shape = tuple(int(e) for e in shape)
    if not shape:
        raise ContractViolation("lattice dimension must be at least 1")
    if any(e < 1 for e in shape):
        raise ContractViolation(f"lattice extents must be positive, got {shape}")
    return shape


def _check_direction(direction: Sequence[int], dim: int) -> ScanDirection:
    direction = tuple(int(s) for s in direction)
    if len(direction) != dim:
        raise ContractViolation(f"direction {direction} does not have {dim} components")
    if any(s not in (1, -1) for s in direction):
        raise ContractViolation(f"direction components must be +1 or -1, got {direction}")
    return direction


def all_directions(dim: int) -> List[ScanDirection]:
    """Return the 2^D scan directions, all-forward first"""
    if dim < 1:
        raise ContractViolation("lattice dimension must be at least 1")
    return [tuple(signs) for signs in itertools.product((1, -1), repeat=dim)]


def forward_direction(dim: int) -> ScanDirection:
    return (1,) * dim


def predecessors(p: Sequence[int], direction: Sequence[int],
                 shape: Sequence[int]) -> List[Optional[Coord]]:
    """
    Predecessor of p along each dimension for the given scan direction

    Args:
        p: Lattice position
        direction: Traversal sign per dimension
        shape: Lattice extents

    Returns:
        One entry per dimension, None where the step leaves the lattice
    """
    shape = _check_shape(shape)
    p = tuple(int(i) for i in p)
    if len(p) != len(shape):
        raise ContractViolation(f"coordinate {p} does not match lattice shape {shape}")
    direction = _check_direction(direction, len(shape))
    if any(not 0 <= i < e for i, e in zip(p, shape)):
        raise ContractViolation(f"coordinate {p} outside lattice {shape}")

    result: List[Optional[Coord]] = []
    for d, sign in enumerate(direction):
        moved = p[d] - sign
        if 0 <= moved < shape[d]:
            result.append(p[:d] + (moved,) + p[d + 1:])
        else:
            result.append(None)
    return result


def scan_order(shape: Sequence[int], direction: Sequence[int]) -> List[Coord]:
    """Lexicographic order in direction-transformed coordinates"""
    shape = _check_shape(shape)
    direction = _check_direction(direction, len(shape))
    ranges = [range(e) if s > 0 else range(e - 1, -1, -1) for e, s in zip(shape, direction)]
    return [tuple(c) for c in itertools.product(*ranges)]


def count_paths(p: Sequence[int], q: Sequence[int]) -> int:
    """Number of monotone p-to-q lattice paths (exact integer)"""
    if len(p) != len(q):
        raise ContractViolation(f"coordinates {tuple(p)} and {tuple(q)} differ in dimension")
    steps = [int(b) - int(a) for a, b in zip(p, q)]
    if any(s < 0 for s in steps):
        return 0
    count = math.factorial(sum(steps))
    for s in steps:
        count //= math.factorial(s)
    return count


def iter_paths(p: Sequence[int], q: Sequence[int]) -> Iterator[List[Coord]]:
    """
    Enumerate monotone p-to-q paths as lists of visited coordinates

    The first element of every path is p and the last is q. Yields
    nothing when q is not reachable from p.
    """
    p = tuple(int(i) for i in p)
    q = tuple(int(i) for i in q)
    if len(p) != len(q):
        raise ContractViolation(f"coordinates {p} and {q} differ in dimension")
    if any(b < a for a, b in zip(p, q)):
        return

    def walk(current: Coord, trail: List[Coord]) -> Iterator[List[Coord]]:
        if current == q:
            yield trail
            return
        for d in range(len(current)):
            if current[d] < q[d]:
                step = current[:d] + (current[d] + 1,) + current[d + 1:]
                yield from walk(step, trail + [step])

    yield from walk(p, [p])


def orient(array, direction: Sequence[int]):
    """Flip the leading lattice axes whose scan sign is negative (involution)"""
    axes = tuple(d for d, s in enumerate(direction) if s < 0)
    if not axes:
        return array
    return np.flip(array, axis=axes)


def orient_coord(p: Sequence[int], direction: Sequence[int], shape: Sequence[int]) -> Coord:
    return tuple(i if s > 0 else e - 1 - i for i, s, e in zip(p, direction, shape))


@dataclass(frozen=True)
class Wavefront:
    """One anti-diagonal of a forward scan"""
    positions: np.ndarray      # flat lattice indices, ascending
    predecessors: np.ndarray   # (len(positions), D) slots into the previous wavefront, -1 if absent
    flat_predecessors: np.ndarray  # (len(positions), D) flat lattice indices, -1 if absent


def wavefront_plan(shape: Sequence[int]) -> List[Wavefront]:
    """
    Group a lattice into anti-diagonals for a forward (+,...,+) scan

    All positions with coordinate sum k only depend on positions with
    sum k-1, so a whole wavefront can be updated at once.
    """
    shape = _check_shape(shape)
    dim = len(shape)
    coords = np.indices(shape).reshape(dim, -1).T
    sums = coords.sum(axis=1)
    strides = np.array([int(np.prod(shape[d + 1:])) for d in range(dim)])

    plan: List[Wavefront] = []
    slot_of = np.full(len(coords), -1)
    for k in range(int(sums.max()) + 1):
        positions = np.flatnonzero(sums == k)
        flat_pred = np.full((len(positions), dim), -1)
        for d in range(dim):
            has = coords[positions, d] > 0
            flat_pred[has, d] = positions[has] - strides[d]
        slots = np.where(flat_pred >= 0, slot_of[np.maximum(flat_pred, 0)], -1)
        plan.append(Wavefront(positions=positions, predecessors=slots, flat_predecessors=flat_pred))
        slot_of[positions] = np.arange(len(positions))
    return plan
