#!/usr/bin/env python3
"""
Recurrent cell definitions
Unit, standard and multi-dimensional LSTM, LSTM Stable, Leaky, LeakyLP and the filter-derived types B-E
One set of update equations serves scalar evaluation, lattice scans and the gradient tape
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import ContractViolation
from lattice import forward_direction, orient, wavefront_plan

logger = logging.getLogger(__name__)

# Below this lambda mass the predecessor weights fall back to uniform
LAMBDA_FLOOR = 1e-12


class CellKind(str, Enum):
    """Update rule of a cell"""
    UNIT = 'unit'
    LSTM_NO_FORGET = 'lstm-noforget'
    LSTM = 'lstm'
    LSTM_STABLE = 'stable'
    LSTM_STABLE_REDUCED = 'stable-reduced'
    LEAKY = 'leaky'
    LEAKY_LP = 'leakylp'
    TYPE_B = 'typeb'
    TYPE_C = 'typec'
    TYPE_D = 'typed'
    TYPE_E = 'typee'


_ALIASES = {
    'noforget': CellKind.LSTM_NO_FORGET,
    'lstmnoforget': CellKind.LSTM_NO_FORGET,
    'lstmstable': CellKind.LSTM_STABLE,
    'stablereduced': CellKind.LSTM_STABLE_REDUCED,
    'lstmstablereduced': CellKind.LSTM_STABLE_REDUCED,
    'typea': CellKind.LEAKY_LP,
}

# Kinds with their own input gate
UNTIED_INPUT = frozenset({
    CellKind.LSTM_NO_FORGET, CellKind.LSTM, CellKind.LSTM_STABLE, CellKind.LSTM_STABLE_REDUCED,
})
# Kinds with the input gate tied to 1 - forget gate; their state stays in [-1, 1]
TIED_INPUT = frozenset({
    CellKind.LEAKY, CellKind.LEAKY_LP, CellKind.TYPE_B, CellKind.TYPE_C, CellKind.TYPE_D, CellKind.TYPE_E,
})
# Kinds that mix predecessor states by a convex combination
CONVEX_MIXING = frozenset({CellKind.LSTM_STABLE, CellKind.LSTM_STABLE_REDUCED}) | TIED_INPUT


def parse_kind(text) -> CellKind:
    """Accept 'leakylp', 'LeakyLP', 'lstm_stable', ... and return the kind"""
    if isinstance(text, CellKind):
        return text
    key = str(text).strip().lower().replace('_', '-')
    try:
        return CellKind(key)
    except ValueError:
        pass
    compact = key.replace('-', '')
    for kind in CellKind:
        if kind.value.replace('-', '') == compact:
            return kind
    if compact in _ALIASES:
        return _ALIASES[compact]
    raise ContractViolation(f"unknown cell kind '{text}'")


class GateGroup(NamedTuple):
    name: str
    width: int
    per_dimension: bool


def gate_layout(kind: CellKind, dim: int) -> List[GateGroup]:
    """
    Gate units of a cell kind in column order

    Args:
        kind: Cell kind
        dim: Lattice dimension D

    Returns:
        Groups of gate units; per-dimension groups hold D gates
    """
    kind = parse_kind(kind)
    if dim < 1:
        raise ContractViolation("lattice dimension must be at least 1")
    if kind is CellKind.LSTM_STABLE_REDUCED and dim != 2:
        raise ContractViolation(f"{kind.value} is only defined for D=2, got D={dim}")

    mixing = [GateGroup('lambda', dim, True)] if kind in CONVEX_MIXING and dim >= 2 else []
    if kind is CellKind.UNIT:
        return []
    if kind is CellKind.LSTM_NO_FORGET:
        return [GateGroup('iota', 1, False), GateGroup('omega', 1, False)]
    if kind is CellKind.LSTM:
        return [GateGroup('iota', 1, False), GateGroup('phi', dim, True), GateGroup('omega', 1, False)]
    if kind is CellKind.LSTM_STABLE:
        return [GateGroup('iota', 1, False), GateGroup('phi', 1, False), GateGroup('omega', 1, False)] + mixing
    if kind is CellKind.LSTM_STABLE_REDUCED:
        return [GateGroup('iota', 1, False), GateGroup('phi', 1, False), GateGroup('omega', 1, False),
                GateGroup('lambda', 1, False)]
    if kind is CellKind.LEAKY:
        return [GateGroup('phi', 1, False), GateGroup('omega', 1, False)] + mixing
    if kind is CellKind.LEAKY_LP:
        return [GateGroup('phi', 1, False), GateGroup('omega0', 1, False), GateGroup('omega1', 1, False)] + mixing
    if kind is CellKind.TYPE_B:
        return [GateGroup('phi', 1, False)] + mixing
    if kind is CellKind.TYPE_C:
        return [GateGroup('phi', 1, False), GateGroup('gamma2', 1, False), GateGroup('gamma3', 1, False),
                GateGroup('gamma4', 1, False)] + mixing
    # TypeD and TypeE share the gate set
    return [GateGroup('phi', 1, False), GateGroup('gamma2', 1, False), GateGroup('gamma3', 1, False)] + mixing


def unit_count(kind: CellKind, dim: int) -> int:
    """Input unit plus every gate unit of one cell"""
    return 1 + sum(group.width for group in gate_layout(kind, dim))


def unit_columns(kind: CellKind, dim: int, cells: int) -> Dict[str, slice]:
    """Column range of each unit group in a layer's net matrix (cell-major inside a group)"""
    columns = {'cin': slice(0, cells)}
    offset = cells
    for group in gate_layout(kind, dim):
        columns[group.name] = slice(offset, offset + group.width * cells)
        offset += group.width * cells
    return columns


def forget_columns(kind: CellKind, dim: int, cells: int) -> Optional[slice]:
    return unit_columns(kind, dim, cells).get('phi')


# ---------------------------------------------------------------------------
# Elementwise backends
# ---------------------------------------------------------------------------

def logistic(x):
    return expit(x)


def tanh_slope(x):
    """Derivative of tanh, accurate far into saturation"""
    with np.errstate(over='ignore'):
        return 1.0 / np.cosh(x) ** 2


def convex_combination(lambdas: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Sum_d s_d * lambda_d / Sum_d lambda_d over the last axis, uniform below LAMBDA_FLOOR"""
    lambdas = np.asarray(lambdas, dtype=float)
    states = np.asarray(states, dtype=float)
    return np.sum(mixing_weights_from_lambdas(lambdas) * states, axis=-1)


def mixing_weights_from_lambdas(lambdas: np.ndarray) -> np.ndarray:
    total = np.sum(lambdas, axis=-1, keepdims=True)
    safe = total >= LAMBDA_FLOOR
    dim = lambdas.shape[-1]
    return np.where(safe, lambdas / np.where(safe, total, 1.0), 1.0 / dim)


class NumpyOps:
    """Plain numpy evaluation of the cell equations"""
    tanh = staticmethod(np.tanh)
    logistic = staticmethod(logistic)
    convex = staticmethod(convex_combination)

    @staticmethod
    def sum_last(x):
        return np.sum(x, axis=-1)


NUMPY_OPS = NumpyOps()


def split_units(net, kind: CellKind, dim: int, cells: int, ops=NUMPY_OPS):
    """
    Activate a layer's net matrix into the input unit and gate groups

    Args:
        net: Nets of shape (..., G*cells)
        kind: Cell kind
        dim: Lattice dimension
        cells: Cells in the layer
        ops: Backend providing tanh and logistic

    Returns:
        Tuple of cin (..., cells) and a gate dictionary; per-dimension
        groups have shape (..., cells, D)
    """
    lead = tuple(net.shape[:-1])
    cin = ops.tanh(net[..., 0:cells])
    gates = {}
    offset = cells
    for group in gate_layout(kind, dim):
        width = group.width * cells
        block = ops.logistic(net[..., offset:offset + width])
        if group.per_dimension:
            block = block.reshape(lead + (cells, group.width))
        gates[group.name] = block
        offset += width
    return cin, gates


def _mixed_previous(kind: CellKind, gates, prev, ops):
    dim = prev.shape[-1]
    if dim == 1:
        return prev[..., 0]
    if kind is CellKind.LSTM_STABLE_REDUCED:
        lam = gates['lambda']
        return lam * prev[..., 0] + (1.0 - lam) * prev[..., 1]
    return ops.convex(gates['lambda'], prev)


def cell_equations(kind: CellKind, cin, gates, prev, ops=NUMPY_OPS):
    """
    Internal state and output of a cell given its activations

    Args:
        kind: Cell kind
        cin: Input unit activation
        gates: Gate activations by group name
        prev: Predecessor states, dimension on the last axis (zeros where absent)
        ops: numpy or tape backend

    Returns:
        Tuple (s, y)
    """
    if kind is CellKind.UNIT:
        return cin, cin
    if kind is CellKind.LSTM_NO_FORGET:
        s = gates['iota'] * cin + ops.sum_last(prev)
        return s, gates['omega'] * ops.tanh(s)
    if kind is CellKind.LSTM:
        s = gates['iota'] * cin + ops.sum_last(gates['phi'] * prev)
        return s, ops.tanh(s) * gates['omega']

    s_prev = _mixed_previous(kind, gates, prev, ops)
    phi = gates['phi']
    if kind in (CellKind.LSTM_STABLE, CellKind.LSTM_STABLE_REDUCED):
        s = gates['iota'] * cin + phi * s_prev
        return s, gates['omega'] * ops.tanh(s)
    if kind is CellKind.TYPE_C:
        s = (1.0 - phi) * cin + phi * gates['gamma4'] * s_prev
    else:
        s = (1.0 - phi) * cin + phi * s_prev

    if kind is CellKind.LEAKY:
        y = gates['omega'] * ops.tanh(s)
    elif kind is CellKind.LEAKY_LP:
        y = ops.tanh(gates['omega0'] * s + gates['omega1'] * s_prev)
    elif kind is CellKind.TYPE_B:
        y = 0.5 * s + 0.5 * s_prev
    elif kind is CellKind.TYPE_C:
        y = ops.tanh(gates['gamma2'] * s + gates['gamma3'] * s_prev)
    elif kind is CellKind.TYPE_D:
        y = gates['gamma3'] * (gates['gamma2'] * s + (1.0 - gates['gamma2']) * s_prev)
    else:
        y = ops.tanh(gates['gamma2'] * s + gates['gamma3'] * (s - s_prev))
    return s, y


# ---------------------------------------------------------------------------
# Scalar API
# ---------------------------------------------------------------------------

@dataclass
class GateActivations:
    """Input unit activation plus the gate values of one cell at one position"""
    y_cin: float
    gates: Dict[str, object] = field(default_factory=dict)

    def arrays(self, kind: CellKind, dim: int) -> Dict[str, np.ndarray]:
        """Validate against the kind's gate set and return numpy values"""
        kind = parse_kind(kind)
        if not -1.0 <= float(self.y_cin) <= 1.0:
            raise ContractViolation(f"y_cin={self.y_cin} outside [-1, 1]")
        layout = gate_layout(kind, dim)
        expected = {group.name for group in layout}
        if set(self.gates) != expected:
            raise ContractViolation(
                f"{kind.value} at D={dim} needs gates {sorted(expected)}, got {sorted(self.gates)}"
            )
        values = {}
        for group in layout:
            value = np.asarray(self.gates[group.name], dtype=float)
            if group.per_dimension:
                if value.shape != (group.width,):
                    raise ContractViolation(f"gate '{group.name}' needs {group.width} values, got shape {value.shape}")
            elif value.shape != ():
                raise ContractViolation(f"gate '{group.name}' must be a scalar")
            if np.any(value < 0.0) or np.any(value > 1.0):
                raise ContractViolation(f"gate '{group.name}'={value} outside [0, 1]")
            values[group.name] = value
        return values


@dataclass(frozen=True)
class CellState:
    s: float
    y: float


@dataclass
class CellParams:
    """
    Weights of one direction sublayer of cells

    Columns of every matrix are laid out by unit_columns(kind, dim, cells).
    w_rec[d] maps the layer's outputs at the predecessor along dimension d.
    """
    kind: CellKind
    dim: int
    cells: int
    w_in: np.ndarray    # (C, G*cells)
    w_rec: np.ndarray   # (D, cells, G*cells)
    bias: np.ndarray    # (G*cells,)

    def __post_init__(self):
        self.kind = parse_kind(self.kind)
        width = unit_count(self.kind, self.dim) * self.cells
        if self.w_in.ndim != 2 or self.w_in.shape[1] != width:
            raise ContractViolation(f"w_in must have {width} columns, got shape {self.w_in.shape}")
        if self.w_rec.shape != (self.dim, self.cells, width):
            raise ContractViolation(
                f"w_rec must have shape {(self.dim, self.cells, width)}, got {self.w_rec.shape}"
            )
        if self.bias.shape != (width,):
            raise ContractViolation(f"bias must have shape {(width,)}, got {self.bias.shape}")
        if not all(np.all(np.isfinite(a)) for a in (self.w_in, self.w_rec, self.bias)):
            raise ContractViolation("cell parameters must be finite")

    @classmethod
    def zeros(cls, kind: CellKind, dim: int, cells: int, inputs: int) -> 'CellParams':
        width = unit_count(kind, dim) * cells
        return cls(kind, dim, cells, np.zeros((inputs, width)), np.zeros((dim, cells, width)), np.zeros(width))


def gate_net(params: CellParams, unit: str, inputs: Sequence[float],
             prev_outputs: Sequence[Optional[Sequence[float]]]) -> np.ndarray:
    """
    Net input of one unit group for every cell of the layer

    Args:
        params: Sublayer weights
        unit: 'cin' or a gate group name
        inputs: Feed-forward features at the position
        prev_outputs: Layer outputs at the D predecessors, None where absent

    Returns:
        Array (cells,) or (cells, D) for per-dimension gate groups
    """
    columns = unit_columns(params.kind, params.dim, params.cells)
    if unit not in columns:
        raise ContractViolation(f"{params.kind.value} has no unit '{unit}'")
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape != (params.w_in.shape[0],):
        raise ContractViolation(f"expected {params.w_in.shape[0]} input features, got shape {inputs.shape}")
    if len(prev_outputs) != params.dim:
        raise ContractViolation(f"expected {params.dim} predecessor outputs, got {len(prev_outputs)}")

    cols = columns[unit]
    net = inputs @ params.w_in[:, cols] + params.bias[cols]
    for d, prev in enumerate(prev_outputs):
        if prev is None:
            continue
        prev = np.asarray(prev, dtype=float)
        if prev.shape != (params.cells,):
            raise ContractViolation(f"predecessor output {d} must have {params.cells} values")
        net = net + prev @ params.w_rec[d][:, cols]

    groups = {group.name: group for group in gate_layout(params.kind, params.dim)}
    if unit in groups and groups[unit].per_dimension:
        return net.reshape(params.cells, groups[unit].width)
    return net


def activate(unit: str, net):
    """tanh for the input unit ('cin'), logistic for every gate"""
    if unit == 'cin':
        return np.tanh(net)
    return logistic(net)


def convex_prev(lambdas: Sequence[float], prev_states: Sequence[Optional[float]]) -> float:
    """Convex combination of predecessor states weighted by the lambda gates"""
    if len(lambdas) != len(prev_states) or not lambdas:
        raise ContractViolation("need one lambda per predecessor state and at least one of each")
    states = np.array([0.0 if s is None else float(s) for s in prev_states])
    return float(convex_combination(np.asarray(lambdas, dtype=float), states))


def cell_forward(kind: CellKind, g: GateActivations,
                 prev_states: Sequence[Optional[float]]) -> CellState:
    """
    Evaluate one cell at one position

    Args:
        kind: Cell kind
        g: Input unit and gate activations
        prev_states: Internal states at the D predecessors, None where absent

    Returns:
        The new internal state and output
    """
    kind = parse_kind(kind)
    dim = len(prev_states)
    gates = g.arrays(kind, dim)
    prev = np.array([0.0 if s is None else float(s) for s in prev_states])
    s, y = cell_equations(kind, float(g.y_cin), gates, prev)
    return CellState(float(s), float(y))


# ---------------------------------------------------------------------------
# Lattice-wide helpers
# ---------------------------------------------------------------------------

def _field_shape_check(kind: CellKind, gate_field: Dict[str, np.ndarray], shape: Tuple[int, ...]):
    dim = len(shape)
    for group in gate_layout(kind, dim):
        if group.name not in gate_field:
            raise ContractViolation(f"gate field for {kind.value} lacks '{group.name}'")
        expected = shape + ((group.width,) if group.per_dimension else ())
        if np.shape(gate_field[group.name]) != expected:
            raise ContractViolation(
                f"gate field '{group.name}' must have shape {expected}, got {np.shape(gate_field[group.name])}"
            )


def lattice_forward(kind: CellKind, cin_field: np.ndarray, gate_field: Dict[str, np.ndarray],
                    direction: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run one scalar cell over a whole lattice

    Args:
        kind: Cell kind
        cin_field: Input unit activation per position
        gate_field: Gate activations per position (trailing axis D for per-dimension groups)
        direction: Scan direction, all-forward by default

    Returns:
        Internal state and output fields
    """
    kind = parse_kind(kind)
    cin_field = np.asarray(cin_field, dtype=float)
    shape = cin_field.shape
    dim = len(shape)
    direction = tuple(direction) if direction is not None else forward_direction(dim)
    _field_shape_check(kind, gate_field, shape)

    cin = orient(cin_field, direction).reshape(-1)
    gates = {}
    for group in gate_layout(kind, dim):
        value = orient(np.asarray(gate_field[group.name], dtype=float), direction)
        gates[group.name] = value.reshape((-1, group.width) if group.per_dimension else (-1,))

    s_flat = np.zeros(cin.size)
    y_flat = np.zeros(cin.size)
    for wave in wavefront_plan(shape):
        pred = wave.flat_predecessors
        prev = np.where(pred >= 0, s_flat[np.maximum(pred, 0)], 0.0)
        wave_gates = {name: value[wave.positions] for name, value in gates.items()}
        s, y = cell_equations(kind, cin[wave.positions], wave_gates, prev)
        s_flat[wave.positions] = s
        y_flat[wave.positions] = y

    s_field = orient(s_flat.reshape(shape), direction)
    y_field = orient(y_flat.reshape(shape), direction)
    return np.ascontiguousarray(s_field), np.ascontiguousarray(y_field)


def mixing_weights(kind: CellKind, gates: Dict[str, np.ndarray], dim: int, batch_shape: Tuple[int, ...]) -> np.ndarray:
    """Normalized predecessor weights (..., D) of a convex-mixing kind"""
    if dim == 1:
        return np.ones(batch_shape + (1,))
    if kind is CellKind.LSTM_STABLE_REDUCED:
        lam = np.asarray(gates['lambda'], dtype=float)
        return np.stack([lam, 1.0 - lam], axis=-1)
    return mixing_weights_from_lambdas(np.asarray(gates['lambda'], dtype=float))


def recurrence_coefficients(kind: CellKind, gates: Dict[str, np.ndarray], dim: int,
                            batch_shape: Tuple[int, ...]) -> np.ndarray:
    """
    Truncated derivative of the state w.r.t. each predecessor state

    Returns:
        Array batch_shape + (D,) with c_d = ds / ds_d^- when gate nets are held constant
    """
    kind = parse_kind(kind)
    if kind is CellKind.UNIT:
        return np.zeros(batch_shape + (dim,))
    if kind is CellKind.LSTM_NO_FORGET:
        return np.ones(batch_shape + (dim,))
    if kind is CellKind.LSTM:
        return np.broadcast_to(np.asarray(gates['phi'], dtype=float), batch_shape + (dim,)).copy()
    retain = np.asarray(gates['phi'], dtype=float)
    if kind is CellKind.TYPE_C:
        retain = retain * np.asarray(gates['gamma4'], dtype=float)
    return retain[..., None] * mixing_weights(kind, gates, dim, batch_shape)


def input_coefficient(kind: CellKind, gates: Dict[str, np.ndarray], batch_shape: Tuple[int, ...]) -> np.ndarray:
    """ds / dy_cin at the same position"""
    kind = parse_kind(kind)
    if kind is CellKind.UNIT:
        return np.ones(batch_shape)
    if kind in UNTIED_INPUT:
        return np.broadcast_to(np.asarray(gates['iota'], dtype=float), batch_shape).copy()
    return np.broadcast_to(1.0 - np.asarray(gates['phi'], dtype=float), batch_shape).copy()


def output_slope(kind: CellKind, gates: Dict[str, np.ndarray], s, s_prev):
    """dy / ds with the mixed previous state held fixed"""
    kind = parse_kind(kind)
    s = np.asarray(s, dtype=float)
    s_prev = np.asarray(s_prev, dtype=float)
    if kind is CellKind.UNIT:
        return np.ones_like(s)
    if kind in UNTIED_INPUT or kind is CellKind.LEAKY:
        return gates['omega'] * tanh_slope(s)
    if kind is CellKind.LEAKY_LP:
        return gates['omega0'] * tanh_slope(gates['omega0'] * s + gates['omega1'] * s_prev)
    if kind is CellKind.TYPE_B:
        return np.full_like(s, 0.5)
    if kind is CellKind.TYPE_C:
        return gates['gamma2'] * tanh_slope(gates['gamma2'] * s + gates['gamma3'] * s_prev)
    if kind is CellKind.TYPE_D:
        return np.broadcast_to(gates['gamma3'] * gates['gamma2'], s.shape).copy()
    pre = gates['gamma2'] * s + gates['gamma3'] * (s - s_prev)
    return (gates['gamma2'] + gates['gamma3']) * tanh_slope(pre)
