#!/usr/bin/env python3
"""
Reverse-mode gradients for lattice recurrences
Array-valued tape for full BPTT, a dynamic program for truncated state Jacobians
and a central finite-difference checker
"""

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from cells import LAMBDA_FLOOR, CellKind, gate_layout, mixing_weights_from_lambdas, parse_kind, recurrence_coefficients
from errors import ContractViolation, DivergedRunError
from lattice import forward_direction, orient, orient_coord, wavefront_plan

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A value recorded on a tape"""
    __slots__ = ('tape', 'value', 'parents', 'backward', 'op', 'index', 'requires_grad')

    def __init__(self, tape: 'Tape', value: np.ndarray, parents: Tuple['Var', ...],
                 backward: Optional[Callable], op: str, requires_grad: bool):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward = backward
        self.op = op
        self.requires_grad = requires_grad
        self.index = -1

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __rmatmul__(self, other):
        return self.tape.matmul(other, self)

    def __getitem__(self, key):
        return self.tape.getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.tape.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return self.tape.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return self.tape.sum(self, axis=axis, keepdims=keepdims)


class Tape:
    """
    Topologically ordered record of array operations

    Nodes are appended in evaluation order; gradient() walks them in
    exact reverse. Every recorded value is checked for NaN/Inf unless
    check_finite is off; `context` is attached to the error position so
    callers can name the lattice wavefront being evaluated.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Var] = []
        self.check_finite = check_finite
        self.context = ''

    def __len__(self):
        return len(self.nodes)

    def _position(self, index: int, op: str) -> str:
        suffix = f", {self.context}" if self.context else ''
        return f"node {index} ({op}{suffix})"

    def _record(self, value, parents: Tuple[Var, ...], backward: Optional[Callable], op: str) -> Var:
        value = np.asarray(value, dtype=float)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise DivergedRunError("non-finite value", position=self._position(len(self.nodes), op))
        requires = any(p.requires_grad for p in parents)
        var = Var(self, value, parents, backward if requires else None, op, requires)
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    # -- leaves ------------------------------------------------------------

    def variable(self, value: ArrayLike, name: str = 'variable') -> Var:
        value = np.array(value, dtype=float)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise DivergedRunError("non-finite input", position=self._position(len(self.nodes), name))
        var = Var(self, value, (), None, name, True)
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def constant(self, value: ArrayLike) -> Var:
        var = Var(self, np.asarray(value, dtype=float), (), None, 'constant', False)
        var.index = len(self.nodes)
        self.nodes.append(var)
        return var

    def lift(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ContractViolation("cannot mix values from different tapes")
            return x
        return self.constant(x)

    # -- elementwise -------------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        return self._record(a.value + b.value, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), 'add')

    def sub(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        return self._record(a.value - b.value, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), 'sub')

    def mul(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        return self._record(a.value * b.value, (a, b),
                            lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
                            'mul')

    def neg(self, a) -> Var:
        a = self.lift(a)
        return self._record(-a.value, (a,), lambda g: (-g,), 'neg')

    def tanh(self, a) -> Var:
        a = self.lift(a)
        out = np.tanh(a.value)
        return self._record(out, (a,), lambda g: (g * (1.0 - out * out),), 'tanh')

    def logistic(self, a) -> Var:
        a = self.lift(a)
        out = expit(a.value)
        return self._record(out, (a,), lambda g: (g * out * (1.0 - out),), 'logistic')

    def convex(self, lambdas, states) -> Var:
        """Sum_d s_d * lambda_d / Sum_d lambda_d over the last axis"""
        lambdas, states = self.lift(lambdas), self.lift(states)
        lam = lambdas.value
        total = np.sum(lam, axis=-1, keepdims=True)
        safe = total >= LAMBDA_FLOOR
        weights = mixing_weights_from_lambdas(lam)
        out = np.sum(weights * states.value, axis=-1)

        def backward(g):
            g = g[..., None]
            grad_states = g * weights
            grad_lambdas = np.where(safe, g * (states.value - out[..., None]) / np.where(safe, total, 1.0), 0.0)
            return _unbroadcast(grad_lambdas, lambdas.shape), _unbroadcast(grad_states, states.shape)

        return self._record(out, (lambdas, states), backward, 'convex')

    def softmax(self, a) -> Var:
        a = self.lift(a)
        shifted = a.value - np.max(a.value, axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=-1, keepdims=True)
        return self._record(out, (a,), lambda g: (out * (g - np.sum(g * out, axis=-1, keepdims=True)),), 'softmax')

    # -- linear algebra and reductions ---------------------------------------

    def matmul(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        if a.ndim < 2 or b.ndim < 2:
            raise ContractViolation("matmul operands need at least two dimensions")

        def backward(g):
            grad_a = np.matmul(g, np.swapaxes(b.value, -1, -2))
            grad_b = np.matmul(np.swapaxes(a.value, -1, -2), g)
            return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

        return self._record(np.matmul(a.value, b.value), (a, b), backward, 'matmul')

    def sum(self, a, axis=None, keepdims: bool = False) -> Var:
        a = self.lift(a)
        out = np.sum(a.value, axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return self._record(out, (a,), backward, 'sum')

    # -- shape plumbing ------------------------------------------------------

    def reshape(self, a, shape) -> Var:
        a = self.lift(a)
        return self._record(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), 'reshape')

    def transpose(self, a, axes=None) -> Var:
        a = self.lift(a)
        out = np.transpose(a.value, axes)
        inverse = None if axes is None else tuple(np.argsort(axes))
        return self._record(out, (a,), lambda g: (np.transpose(g, inverse),), 'transpose')

    def flip(self, a, axes) -> Var:
        a = self.lift(a)
        axes = tuple(axes)
        if not axes:
            return a
        return self._record(np.flip(a.value, axis=axes).copy(), (a,),
                            lambda g: (np.flip(g, axis=axes).copy(),), 'flip')

    def pad(self, a, pad_width) -> Var:
        """Zero padding, pad_width as for numpy.pad"""
        a = self.lift(a)
        pad_width = tuple(tuple(int(v) for v in pair) for pair in pad_width)
        keep = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
        return self._record(np.pad(a.value, pad_width), (a,), lambda g: (g[keep],), 'pad')

    def getitem(self, a, key) -> Var:
        a = self.lift(a)
        parts = key if isinstance(key, tuple) else (key,)
        advanced = any(isinstance(k, (list, np.ndarray)) for k in parts)

        def backward(g):
            grad = np.zeros(a.shape)
            if advanced:
                np.add.at(grad, key, g)
            else:
                grad[key] = g
            return (grad,)

        return self._record(a.value[key], (a,), backward, 'getitem')

    def take(self, a, indices, axis: int = 0) -> Var:
        """Gather slices along an axis; index -1 yields zeros"""
        a = self.lift(a)
        indices = np.asarray(indices, dtype=int)
        absent = indices < 0
        safe = np.where(absent, 0, indices)
        out = np.take(a.value, safe, axis=axis)
        if absent.any():
            np.moveaxis(out, axis, 0)[absent] = 0.0

        def backward(g):
            grad = np.zeros(a.shape)
            present = ~absent
            np.add.at(np.moveaxis(grad, axis, 0), safe[present], np.moveaxis(g, axis, 0)[present])
            return (grad,)

        return self._record(out, (a,), backward, 'take')

    def stack(self, items: Sequence, axis: int = 0) -> Var:
        items = tuple(self.lift(x) for x in items)
        out = np.stack([x.value for x in items], axis=axis)
        return self._record(out, items,
                            lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(items))), 'stack')

    def concat(self, items: Sequence, axis: int = 0) -> Var:
        items = tuple(self.lift(x) for x in items)
        out = np.concatenate([x.value for x in items], axis=axis)
        bounds = np.cumsum([x.shape[axis] for x in items])[:-1]
        return self._record(out, items, lambda g: tuple(np.split(g, bounds, axis=axis)), 'concat')

    def custom(self, value, parents: Sequence, backward: Callable, op: str = 'custom') -> Var:
        """Record a node whose vector-Jacobian product is supplied by the caller"""
        parents = tuple(self.lift(p) for p in parents)
        return self._record(value, parents, backward, op)

    # -- reverse pass --------------------------------------------------------

    def gradient(self, loss: Var, wrt: Sequence[Var]) -> List[np.ndarray]:
        """
        Adjoints of a scalar loss with respect to recorded values

        Args:
            loss: Scalar node on this tape
            wrt: Nodes to return gradients for

        Returns:
            One array per requested node, zeros where the loss does not depend on it
        """
        if loss.tape is not self:
            raise ContractViolation("loss was recorded on another tape")
        if loss.size != 1:
            raise ContractViolation(f"loss must be scalar, got shape {loss.shape}")

        adjoints: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        adjoints[loss.index] = np.ones(loss.shape)
        for index in range(loss.index, -1, -1):
            node = self.nodes[index]
            g = adjoints[index]
            if g is None or node.backward is None:
                continue
            for parent, grad in zip(node.parents, node.backward(g)):
                if grad is None or not parent.requires_grad:
                    continue
                current = adjoints[parent.index]
                adjoints[parent.index] = grad if current is None else current + grad

        grads = []
        for var in wrt:
            g = adjoints[var.index]
            g = np.zeros(var.shape) if g is None else np.asarray(g, dtype=float).reshape(var.shape)
            if self.check_finite and not np.all(np.isfinite(g)):
                raise DivergedRunError("non-finite gradient", position=self._position(var.index, var.op))
            grads.append(g)
        return grads


class TapeOps:
    """Backend that evaluates the cell equations on a tape"""

    def __init__(self, tape: Tape):
        self.tape = tape

    def tanh(self, x):
        return self.tape.tanh(x)

    def logistic(self, x):
        return self.tape.logistic(x)

    def convex(self, lambdas, states):
        return self.tape.convex(lambdas, states)

    def sum_last(self, x):
        return self.tape.sum(x, axis=-1)


def grad_full(func: Callable[..., Var], *arrays: ArrayLike, check_finite: bool = True) -> Tuple[float, List[np.ndarray]]:
    """
    Evaluate a recorded computation and its exact reverse-mode gradient

    Args:
        func: Called as func(tape, *variables); must return a scalar Var
        arrays: Values of the differentiable arguments

    Returns:
        Loss value and the gradient with respect to every argument
    """
    tape = Tape(check_finite=check_finite)
    variables = [tape.variable(a, name=f"arg{i}") for i, a in enumerate(arrays)]
    loss = tape.lift(func(tape, *variables))
    grads = tape.gradient(loss, variables)
    logger.debug(f"Recorded {len(tape)} tape nodes, loss {float(loss.value):.6g}")
    return float(loss.value.reshape(())), grads


def _evaluate(func: Callable[..., Var], x: np.ndarray) -> float:
    tape = Tape(check_finite=False)
    return float(tape.lift(func(tape, tape.constant(x))).value.reshape(()))


def finite_diff_check(func: Callable[[Tape, Var], Var], point: ArrayLike, step: float = 1e-6,
                      coordinates: Union[None, int, Sequence[int]] = None,
                      floor: float = 1e-2, seed: int = 0) -> float:
    """
    Compare grad_full against central differences

    Args:
        func: Called as func(tape, x) returning a scalar Var
        point: Where to differentiate
        step: Finite-difference step
        coordinates: All coordinates (None), a random subset of this size (int)
            or explicit flat indices
        floor: Lower bound of the relative-error denominator
        seed: Generator seed for the random subset

    Returns:
        Worst relative error |g - fd| / max(|g|, |fd|, floor)
    """
    if step <= 0:
        raise ContractViolation(f"finite-difference step must be positive, got {step}")
    point = np.array(point, dtype=float)
    _, (analytic,) = grad_full(func, point)
    flat_point = point.reshape(-1)
    flat_grad = analytic.reshape(-1)

    if coordinates is None:
        chosen = np.arange(flat_point.size)
    elif isinstance(coordinates, (int, np.integer)):
        rng = np.random.default_rng(seed)
        chosen = np.sort(rng.choice(flat_point.size, size=min(int(coordinates), flat_point.size), replace=False))
    else:
        chosen = np.asarray(coordinates, dtype=int)

    worst = 0.0
    for i in chosen:
        up = flat_point.copy()
        down = flat_point.copy()
        up[i] += step
        down[i] -= step
        # divide by the representable step, not the nominal one
        numeric = (_evaluate(func, up.reshape(point.shape)) - _evaluate(func, down.reshape(point.shape))) / (up[i] - down[i])
        scale = max(abs(flat_grad[i]), abs(numeric), floor)
        worst = max(worst, abs(flat_grad[i] - numeric) / scale)
    logger.debug(f"Finite-difference check over {len(chosen)} coordinates: worst relative error {worst:.3e}")
    return worst


# ---------------------------------------------------------------------------
# Truncated gradients
# ---------------------------------------------------------------------------

def _oriented_coefficients(kind: CellKind, gate_field: Dict[str, np.ndarray],
                           shape: Tuple[int, ...], direction) -> np.ndarray:
    dim = len(shape)
    layout = gate_layout(kind, dim)
    gates = {}
    for group in layout:
        if group.name not in gate_field:
            raise ContractViolation(f"gate field for {kind.value} lacks '{group.name}'")
        value = np.asarray(gate_field[group.name], dtype=float)
        expected = shape + ((group.width,) if group.per_dimension else ())
        if value.shape != expected:
            raise ContractViolation(f"gate field '{group.name}' must have shape {expected}, got {value.shape}")
        gates[group.name] = orient(value, direction)
    return recurrence_coefficients(kind, gates, dim, shape).reshape(-1, dim)


def _resolve(kind, shape, direction):
    kind = parse_kind(kind)
    shape = tuple(int(e) for e in shape)
    if not shape or any(e < 1 for e in shape):
        raise ContractViolation(f"invalid lattice shape {shape}")
    direction = tuple(direction) if direction is not None else forward_direction(len(shape))
    if len(direction) != len(shape):
        raise ContractViolation(f"direction {direction} does not match lattice shape {shape}")
    return kind, shape, direction


def truncated_state_jacobian(kind: CellKind, gate_field: Dict[str, np.ndarray], p_in: Sequence[int],
                             shape: Sequence[int], direction: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    J(p) = ds^p / ds^{p_in} with gradient flow through gate nets cut

    Args:
        kind: Cell kind
        gate_field: Gate activations per position, treated as constants
        p_in: Source position
        shape: Lattice extents
        direction: Scan direction, all-forward by default

    Returns:
        Field of shape `shape`; 1 at p_in, 0 wherever p_in is not a predecessor
    """
    kind, shape, direction = _resolve(kind, shape, direction)
    p_in = tuple(int(i) for i in p_in)
    if len(p_in) != len(shape) or any(not 0 <= i < e for i, e in zip(p_in, shape)):
        raise ContractViolation(f"source {p_in} outside lattice {shape}")

    coefficients = _oriented_coefficients(kind, gate_field, shape, direction)
    source = orient_coord(p_in, direction, shape)
    flat_source = int(np.ravel_multi_index(source, shape))
    start = sum(source)

    jacobian = np.zeros(int(np.prod(shape)))
    jacobian[flat_source] = 1.0
    for k, wave in enumerate(wavefront_plan(shape)):
        if k <= start:
            continue
        pred = wave.flat_predecessors
        upstream = np.where(pred >= 0, jacobian[np.maximum(pred, 0)], 0.0)
        jacobian[wave.positions] = np.sum(coefficients[wave.positions] * upstream, axis=1)
    return np.ascontiguousarray(orient(jacobian.reshape(shape), direction))


def truncated_jacobian_matrix(kind: CellKind, gate_field: Dict[str, np.ndarray], shape: Sequence[int],
                              direction: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Truncated Jacobians from every source at once

    Returns:
        Matrix M with M[flat(p), flat(q)] = ds^p / ds^q in row-major flat indices
    """
    kind, shape, direction = _resolve(kind, shape, direction)
    coefficients = _oriented_coefficients(kind, gate_field, shape, direction)
    size = int(np.prod(shape))

    oriented = np.zeros((size, size))
    for wave in wavefront_plan(shape):
        rows = np.zeros((len(wave.positions), size))
        rows[np.arange(len(wave.positions)), wave.positions] = 1.0
        for d in range(len(shape)):
            pred = wave.flat_predecessors[:, d]
            present = pred >= 0
            if present.any():
                rows[present] += coefficients[wave.positions[present], d][:, None] * oriented[pred[present]]
        oriented[wave.positions] = rows

    # oriented flat index i corresponds to original flat index order[i]
    order = orient(np.arange(size).reshape(shape), direction).reshape(-1)
    matrix = np.zeros_like(oriented)
    matrix[np.ix_(order, order)] = oriented
    return matrix
