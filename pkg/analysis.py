#!/usr/bin/env python3
"""
Cell property harness and frequency-domain toolkit
Vanishing/exploding gradient probes, output-dependency checks, path-sum explosion series
and first-order transfer functions of the leaky cells
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from autodiff import truncated_jacobian_matrix, truncated_state_jacobian
from cells import (CONVEX_MIXING, UNTIED_INPUT, CellKind, gate_layout, input_coefficient, lattice_forward,
                   output_slope, parse_kind)
from errors import ContractViolation
from lattice import count_paths

logger = logging.getLogger(__name__)

# Open/closed gate distance from 0 and 1, what a logistic unit reaches at |net| >= 7
GATE_EPSILON = 1e-3

HOLDS = 'holds'
VIOLATED = 'violated'


@dataclass
class PropertyReport:
    """Outcome of one property probe"""
    property: str
    kind: str
    dim: int
    verdict: str
    witness: Dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    def to_dict(self) -> Dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)

    def to_text(self) -> str:
        lines = [f"=== {self.property} probe: {self.kind} (D={self.dim}) ===",
                 f"Verdict: {self.verdict}"]
        if self.seed is not None:
            lines.append(f"Seed: {self.seed}")
        for key in sorted(self.witness):
            lines.append(f"  {key}: {_json_default(self.witness[key])}")
        return "\n".join(lines)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    return value


def random_gate_field(kind: CellKind, shape: Tuple[int, ...], rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Independent uniform gate values at every lattice position"""
    dim = len(shape)
    field_ = {}
    for group in gate_layout(kind, dim):
        size = shape + ((group.width,) if group.per_dimension else ())
        field_[group.name] = rng.uniform(0.0, 1.0, size=size)
    return field_


def _constant_field(kind: CellKind, shape: Tuple[int, ...], values: Dict[str, float]) -> Dict[str, np.ndarray]:
    dim = len(shape)
    field_ = {}
    for group in gate_layout(kind, dim):
        size = shape + ((group.width,) if group.per_dimension else ())
        field_[group.name] = np.full(size, values.get(group.name, 0.5))
    return field_


# ---------------------------------------------------------------------------
# NEG
# ---------------------------------------------------------------------------

def _directed_explosion_search(kind: CellKind, dim: int, offset: int = 5) -> Dict:
    """All forget gates nearly open, Jacobian at the far diagonal corner"""
    shape = (offset + 1,) * dim
    gate = 1.0 - 1e-9
    field_ = _constant_field(kind, shape, {'iota': gate, 'phi': gate, 'omega': gate})
    jacobian = truncated_state_jacobian(kind, field_, (0,) * dim, shape)
    target = (offset,) * dim
    return {
        'search': 'directed',
        'forget_gate': gate,
        'lattice_shape': shape,
        'source': (0,) * dim,
        'target': target,
        'value': float(jacobian[target]),
        'path_count': count_paths((0,) * dim, target),
    }


def neg_probe(kind, dim: int, trials: int, max_shape: Optional[Sequence[int]] = None,
              seed: int = 0, tolerance: float = 1e-12) -> PropertyReport:
    """
    Check that truncated state Jacobians stay in [0, 1]

    Args:
        kind: Cell kind
        dim: Lattice dimension
        trials: Number of random gate fields
        max_shape: Largest lattice extents (default 6 per dimension)
        seed: Base seed; trial i uses default_rng([seed, i])
        tolerance: Rounding allowance on both interval ends

    Returns:
        PropertyReport; a violation names trial, lattice shape, source and target
    """
    kind = parse_kind(kind)
    if trials < 1:
        raise ContractViolation(f"trials must be at least 1, got {trials}")
    max_shape = tuple(int(e) for e in max_shape) if max_shape is not None else (6,) * dim
    if len(max_shape) != dim or any(e < 1 for e in max_shape):
        raise ContractViolation(f"max_shape {max_shape} does not fit D={dim}")
    gate_layout(kind, dim)

    if dim >= 2 and kind in (CellKind.LSTM, CellKind.LSTM_NO_FORGET):
        directed = _directed_explosion_search(kind, dim)
        if directed['value'] > 1.0 + tolerance:
            logger.info(f"NEG violated for {kind.value} D={dim}: J={directed['value']:.6g} at {directed['target']}")
            return PropertyReport('NEG', kind.value, dim, VIOLATED, directed, seed)

    highest, lowest = 0.0, 1.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        shape = tuple(int(rng.integers(1, e + 1)) for e in max_shape)
        gates = random_gate_field(kind, shape, rng)
        matrix = truncated_jacobian_matrix(kind, gates, shape)
        highest = max(highest, float(matrix.max()))
        lowest = min(lowest, float(matrix.min()))
        if matrix.max() > 1.0 + tolerance or matrix.min() < -tolerance:
            flat = int(np.argmax(matrix)) if matrix.max() > 1.0 + tolerance else int(np.argmin(matrix))
            target, source = np.unravel_index(flat, matrix.shape)
            witness = {
                'search': 'random',
                'trial': trial,
                'lattice_shape': shape,
                'source': tuple(int(i) for i in np.unravel_index(source, shape)),
                'target': tuple(int(i) for i in np.unravel_index(target, shape)),
                'value': float(matrix.flat[flat]),
            }
            logger.info(f"NEG violated for {kind.value} D={dim} in trial {trial}")
            return PropertyReport('NEG', kind.value, dim, VIOLATED, witness, seed)

    witness = {'trials': trials, 'max_shape': max_shape, 'max_value': highest, 'min_value': lowest}
    logger.info(f"NEG holds for {kind.value} D={dim} over {trials} trials")
    return PropertyReport('NEG', kind.value, dim, HOLDS, witness, seed)


# ---------------------------------------------------------------------------
# NVG
# ---------------------------------------------------------------------------

def nvg_epsilon(kind: CellKind, dim: int, window: int, delta: float) -> float:
    """Gate distance used by the constructive schedule for a window of L1 length `window`"""
    kind = parse_kind(kind)
    if kind in CONVEX_MIXING and dim >= 2:
        return min(delta, (1.0 - (1.0 - delta) ** (1.0 / (2 * window + 1))) / (dim - 1))
    return min(delta / dim, 1.0 - (1.0 - delta) ** (1.0 / (window + 1)))


def nvg_gate_schedule(kind: CellKind, p_in: Tuple[int, ...], p_out: Tuple[int, ...],
                      epsilon: float, shape: Tuple[int, ...]) -> Dict[str, np.ndarray]:
    """
    Gate field that carries the state from p_in to every position of the window

    Input gates open only at p_in. Inside the window (p_in < p <= p_out) the
    forget gates are open and the lambda gates favour predecessors that are
    reachable from p_in. Everywhere else gates are closed. Tied-input kinds
    keep the forget gate open before p_in so their input gate stays closed there.
    """
    kind = parse_kind(kind)
    dim = len(shape)
    coords = np.indices(shape)
    lower = np.array(p_in).reshape((dim,) + (1,) * dim)
    upper = np.array(p_out).reshape((dim,) + (1,) * dim)
    after_in = np.all(coords >= lower, axis=0)
    at_in = np.all(coords == lower, axis=0)
    window = after_in & np.all(coords <= upper, axis=0) & ~at_in
    # reachable[..., d]: predecessor along d is reachable from p_in
    reachable = np.stack([after_in & (coords[d] > lower[d]) for d in range(dim)], axis=-1)
    n_reachable = np.maximum(reachable.sum(axis=-1), 1)

    open_, closed = 1.0 - epsilon, epsilon
    field_: Dict[str, np.ndarray] = {}
    for group in gate_layout(kind, dim):
        if group.name == 'iota':
            field_['iota'] = np.where(at_in, open_, closed)
        elif group.name == 'phi' and group.per_dimension:
            field_['phi'] = np.where(window[..., None] & reachable, open_ / n_reachable[..., None], closed)
        elif group.name == 'phi':
            phi = np.where(window, open_, closed)
            if kind not in UNTIED_INPUT:
                phi = np.where(after_in, phi, open_)
            field_['phi'] = phi
        elif group.name == 'lambda' and group.per_dimension:
            field_['lambda'] = np.where(window[..., None] & reachable, open_, closed)
        elif group.name == 'lambda':
            only_first = reachable[..., 0] & ~reachable[..., 1]
            only_second = reachable[..., 1] & ~reachable[..., 0]
            field_['lambda'] = np.where(window & only_first, open_, np.where(window & only_second, closed, 0.5))
        elif group.name == 'gamma4':
            field_['gamma4'] = np.full(shape, 1.0 - 1e-12)
        else:
            field_[group.name] = np.full(shape, open_)
    return field_


def nvg_probe(kind, dim: int, p_in: Sequence[int], p_out: Sequence[int], delta: float,
              tolerance: float = 1e-9) -> PropertyReport:
    """
    Constructive check of the not-vanishing-gradient property

    Builds the schedule of nvg_gate_schedule and evaluates every truncated
    gradient ds^{p2} / dy_cin^{p1} on a lattice one step larger than p_out.
    From p_in to positions inside [p_in, p_out] the gradient must lie in
    [1-delta, 1]; every other pair must lie in [0, delta]. Sources whose input
    gate the schedule cannot close (tied-input kinds where the forget gate
    must be closed) are counted as exempt and left out.

    Args:
        kind: Cell kind
        dim: Lattice dimension
        p_in: Window start
        p_out: Window end
        delta: Interval width, 0 < delta < 1

    Returns:
        PropertyReport with epsilon, extreme gradients and the worst pair on violation
    """
    kind = parse_kind(kind)
    p_in = tuple(int(i) for i in p_in)
    p_out = tuple(int(i) for i in p_out)
    if len(p_in) != dim or len(p_out) != dim:
        raise ContractViolation(f"window corners must have {dim} components")
    if any(i < 0 for i in p_in) or any(a > b for a, b in zip(p_in, p_out)):
        raise ContractViolation(f"window start {p_in} is not below window end {p_out}")
    if not 0.0 < delta < 1.0:
        raise ContractViolation(f"delta must lie in (0, 1), got {delta}")

    window_length = sum(b - a for a, b in zip(p_in, p_out))
    epsilon = nvg_epsilon(kind, dim, window_length, delta)
    shape = tuple(b + 2 for b in p_out)
    gates = nvg_gate_schedule(kind, p_in, p_out, epsilon, shape)

    matrix = truncated_jacobian_matrix(kind, gates, shape)
    inflow = input_coefficient(kind, gates, shape).reshape(-1)
    gradients = matrix * inflow[None, :]

    coords = np.indices(shape).reshape(dim, -1).T
    source = int(np.ravel_multi_index(p_in, shape))
    in_window = np.all(coords >= np.array(p_in), axis=1) & np.all(coords <= np.array(p_out), axis=1)
    exempt = (inflow > delta) & (np.arange(len(inflow)) != source)

    inside = gradients[in_window, source]
    outside_mask = np.ones_like(gradients, dtype=bool)
    outside_mask[in_window, source] = False
    outside_mask[:, exempt] = False
    outside = gradients[outside_mask]

    witness = {
        'delta': delta,
        'epsilon': epsilon,
        'window_length': window_length,
        'p_in': p_in,
        'p_out': p_out,
        'lattice_shape': shape,
        'min_in_window': float(inside.min()),
        'max_in_window': float(inside.max()),
        'max_outside': float(outside.max()) if outside.size else 0.0,
        'gradient_at_p_in': float(gradients[source, source]),
        'exempt_sources': int(exempt.sum()),
    }
    inside_ok = inside.min() >= 1.0 - delta - tolerance and inside.max() <= 1.0 + tolerance
    outside_ok = outside.size == 0 or (outside.min() >= -tolerance and outside.max() <= delta + tolerance)
    if inside_ok and outside_ok:
        logger.info(f"NVG holds for {kind.value} D={dim}, window {p_in}->{p_out}, epsilon={epsilon:.3g}")
        return PropertyReport('NVG', kind.value, dim, HOLDS, witness)

    if not inside_ok:
        rows = np.flatnonzero(in_window)
        worst = rows[int(np.argmin(inside))]
        witness['worst_pair'] = {'source': p_in, 'target': tuple(int(i) for i in coords[worst]),
                                 'value': float(gradients[worst, source])}
    else:
        masked = np.where(outside_mask, gradients, -np.inf)
        target, src = np.unravel_index(int(np.argmax(masked)), masked.shape)
        witness['worst_pair'] = {'source': tuple(int(i) for i in coords[src]),
                                 'target': tuple(int(i) for i in coords[target]),
                                 'value': float(gradients[target, src])}
    logger.info(f"NVG violated for {kind.value} D={dim}: {witness['worst_pair']}")
    return PropertyReport('NVG', kind.value, dim, VIOLATED, witness)


# ---------------------------------------------------------------------------
# COD
# ---------------------------------------------------------------------------

_OPEN_OUTPUT = {
    CellKind.LEAKY: {'omega': 'open'},
    CellKind.LEAKY_LP: {'omega0': 'open', 'omega1': 'open'},
    CellKind.TYPE_B: {},
    CellKind.TYPE_C: {'gamma2': 'open', 'gamma3': 'open'},
    CellKind.TYPE_D: {'gamma2': 'open', 'gamma3': 'open'},
    CellKind.TYPE_E: {'gamma2': 'open', 'gamma3': 'closed'},
}
_CLOSED_OUTPUT = {
    CellKind.LEAKY: {'omega': 'closed'},
    CellKind.LEAKY_LP: {'omega0': 'closed', 'omega1': 'open'},
    CellKind.TYPE_B: {},
    CellKind.TYPE_C: {'gamma2': 'closed', 'gamma3': 'open'},
    CellKind.TYPE_D: {'gamma2': 'open', 'gamma3': 'closed'},
    CellKind.TYPE_E: {'gamma2': 'closed', 'gamma3': 'closed'},
}


def _levels(spec: Dict[str, str], epsilon: float) -> Dict[str, float]:
    return {name: (1.0 - epsilon if level == 'open' else epsilon) for name, level in spec.items()}


def _saturation_drive(kind: CellKind, drive_length: int, drive_input: float, epsilon: float) -> Dict:
    dim = 2 if kind is CellKind.LSTM_STABLE_REDUCED else 1
    shape = (1,) * (dim - 1) + (drive_length,)
    open_ = 1.0 - epsilon
    gates: Dict[str, np.ndarray] = {}
    for group in gate_layout(kind, dim):
        if group.name == 'lambda' and group.per_dimension:
            weights = np.full(group.width, epsilon)
            weights[-1] = open_
            gates['lambda'] = np.broadcast_to(weights, shape + (group.width,)).copy()
        elif group.name == 'lambda':
            gates['lambda'] = np.full(shape, epsilon)
        elif group.per_dimension:
            gates[group.name] = np.full(shape + (group.width,), open_)
        else:
            gates[group.name] = np.full(shape, open_)
    states, _ = lattice_forward(kind, np.full(shape, drive_input), gates)
    final_state = float(states.reshape(-1)[-1])
    open_slope = float(output_slope(kind, {'omega': open_}, final_state, 0.0))
    return {
        'drive_length': drive_length,
        'drive_input': drive_input,
        'epsilon': epsilon,
        'final_state': final_state,
        'open_gate_slope': open_slope,
        'closed_gate_bound': epsilon,
    }


def cod_probe(kind, drive_length: int = 50, drive_input: float = 0.9,
              epsilon: float = GATE_EPSILON, grid: int = 401) -> PropertyReport:
    """
    Check that the output gates can switch the output's dependency on the state

    Bounded-state kinds: the smallest dy/ds with output gates open (delta1)
    must exceed the largest dy/ds with them closed (delta2) over |s|, |s^-| <= 1.
    Kinds with an untied input gate: the state is driven with open input and
    forget gates; once it saturates the open-gate slope falls below the
    closed-gate bound and the property is violated.
    """
    kind = parse_kind(kind)
    if drive_length < 1:
        raise ContractViolation(f"drive_length must be at least 1, got {drive_length}")

    if kind is CellKind.UNIT:
        witness = {'reason': 'no output gate', 'delta1': 1.0, 'delta2': 1.0}
        return PropertyReport('COD', kind.value, 1, VIOLATED, witness)

    if kind in UNTIED_INPUT:
        witness = _saturation_drive(kind, drive_length, drive_input, epsilon)
        verdict = VIOLATED if witness['open_gate_slope'] <= witness['closed_gate_bound'] else HOLDS
        dim = 2 if kind is CellKind.LSTM_STABLE_REDUCED else 1
        logger.info(f"COD drive for {kind.value}: state {witness['final_state']:.4g}, "
                    f"open-gate slope {witness['open_gate_slope']:.3e}")
        return PropertyReport('COD', kind.value, dim, verdict, witness)

    values = np.linspace(-1.0, 1.0, grid)
    s, s_prev = np.meshgrid(values, values, indexing='ij')
    open_slopes = output_slope(kind, _levels(_OPEN_OUTPUT[kind], epsilon), s, s_prev)
    closed_slopes = output_slope(kind, _levels(_CLOSED_OUTPUT[kind], epsilon), s, s_prev)
    delta1 = float(open_slopes.min())
    delta2 = float(closed_slopes.max())
    where = np.unravel_index(int(np.argmin(open_slopes)), open_slopes.shape)
    witness = {
        'epsilon': epsilon,
        'delta1': delta1,
        'delta2': delta2,
        'delta1_at': {'s': float(s[where]), 's_prev': float(s_prev[where])},
    }
    verdict = HOLDS if delta2 < delta1 else VIOLATED
    logger.info(f"COD {verdict} for {kind.value}: delta1={delta1:.4g}, delta2={delta2:.4g}")
    return PropertyReport('COD', kind.value, 1, verdict, witness)


# ---------------------------------------------------------------------------
# Exploding gradients of the MD LSTM
# ---------------------------------------------------------------------------

def explosion_series(dim: int, phi: float, k_max: int) -> List[Tuple[int, float]]:
    """
    Truncated Jacobian of an MD LSTM with uniform forget gates along the diagonal

    Returns:
        (k, J at offset (k, ..., k)) for k = 0..k_max
    """
    if dim < 1:
        raise ContractViolation("dimension must be at least 1")
    if not 0.0 < phi < 1.0:
        raise ContractViolation(f"phi must lie in (0, 1), got {phi}")
    if k_max < 0:
        raise ContractViolation(f"k_max must be non-negative, got {k_max}")
    shape = (k_max + 1,) * dim
    gates = {'iota': np.full(shape, 0.5), 'phi': np.full(shape + (dim,), phi), 'omega': np.full(shape, 0.5)}
    jacobian = truncated_state_jacobian(CellKind.LSTM, gates, (0,) * dim, shape)
    return [(k, float(jacobian[(k,) * dim])) for k in range(k_max + 1)]


def explosion_oracle(dim: int, phi: float, k: int) -> float:
    """((Dk)! / (k!)^D) * phi^(Dk)"""
    return float(count_paths((0,) * dim, (k,) * dim)) * phi ** (dim * k)


def series_diverges(series: Sequence[Tuple[int, float]]) -> bool:
    """Ratio test on the last two terms"""
    if len(series) < 3:
        return False
    previous, last = series[-2][1], series[-1][1]
    return previous > 0.0 and last / previous > 1.0


# ---------------------------------------------------------------------------
# First-order LSI model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferFunction:
    """H(z) = alpha0 / (1 - alpha1 z^-1) * (b0 + b1 z^-1)"""
    alpha0: float
    alpha1: float
    b0: float
    b1: float

    def __post_init__(self):
        if not abs(self.alpha1) < 1.0:
            raise ContractViolation(f"pole alpha1={self.alpha1} is not inside the unit circle")
        if self.alpha1 >= 0.0 and abs(self.alpha0) > 1.0 - self.alpha1 + 1e-12:
            raise ContractViolation(
                f"|alpha0|={abs(self.alpha0)} exceeds the gain bound 1 - alpha1 = {1.0 - self.alpha1}"
            )

    def coefficients(self) -> Tuple[List[float], List[float]]:
        """Numerator and denominator for scipy.signal"""
        return [self.alpha0 * self.b0, self.alpha0 * self.b1], [1.0, -self.alpha1]


def magnitude(tf: TransferFunction, omega):
    """
    Closed-form magnitudes at angular frequency omega

    Returns:
        Tuple (|H1|, |H2|, |H|)
    """
    omega = np.asarray(omega, dtype=float)
    h1 = abs(tf.alpha0) / np.sqrt((1.0 - tf.alpha1 * np.cos(omega)) ** 2 + (tf.alpha1 * np.sin(omega)) ** 2)
    h2 = np.sqrt((tf.b0 + tf.b1 * np.cos(omega)) ** 2 + (tf.b1 * np.sin(omega)) ** 2)
    if omega.ndim == 0:
        return float(h1), float(h2), float(h1 * h2)
    return h1, h2, h1 * h2


def _check_length(n: int):
    if n < 64 or n & (n - 1):
        raise ContractViolation(f"spectrum length must be a power of two >= 64, got {n}")


def impulse_spectrum(tf: TransferFunction, n: int) -> np.ndarray:
    """|DFT| of the simulated impulse response on the real-FFT grid (n//2 + 1 bins)"""
    _check_length(n)
    impulse = np.zeros(n)
    impulse[0] = 1.0
    b, a = tf.coefficients()
    response = signal.lfilter(b, a, impulse)
    return np.abs(np.fft.rfft(response))


def frequency_response(tf: TransferFunction, n: int = 4096) -> Dict[str, np.ndarray]:
    """Closed-form |H1|, |H2|, |H| at f = 0 .. 0.5 cycles/sample"""
    _check_length(n)
    frequency = np.fft.rfftfreq(n)
    h1, h2, h = magnitude(tf, 2.0 * np.pi * frequency)
    return {'frequency': frequency, 'h1': h1, 'h2': h2, 'h': h}


def freqz_magnitude(tf: TransferFunction, frequency: np.ndarray) -> np.ndarray:
    """|H| from scipy.signal.freqz at the given cycles/sample"""
    b, a = tf.coefficients()
    _, response = signal.freqz(b, a, worN=2.0 * np.pi * np.asarray(frequency, dtype=float))
    return np.abs(response)


def cutoff_frequency(y_phi: float) -> float:
    """Half-power frequency of the Butterworth configuration b0 = b1 = 1/2"""
    if not -1.0 < y_phi < 1.0:
        raise ContractViolation(f"y_phi must lie in (-1, 1), got {y_phi}")
    return math.atan((1.0 - y_phi) / (1.0 + y_phi)) / math.pi


def gate_for_cutoff(f: float) -> float:
    """Forget gate value whose Butterworth cutoff is f"""
    if not 0.0 < f < 0.5:
        raise ContractViolation(f"cutoff must lie in (0, 0.5), got {f}")
    t = math.tan(math.pi * f)
    return (1.0 - t) / (1.0 + t)


def butterworth(y_phi: float) -> TransferFunction:
    return TransferFunction(1.0 - y_phi, y_phi, 0.5, 0.5)


def transfer_function(kind, gates: Dict[str, float]) -> TransferFunction:
    """
    First-order model of a tied-input cell with fixed gates (D=1, squashing ignored)

    Args:
        kind: Leaky, LeakyLP or TypeB..TypeE
        gates: Gate values by name

    Returns:
        TransferFunction of the state filter followed by the output filter
    """
    kind = parse_kind(kind)
    try:
        phi = float(gates['phi'])
        if kind is CellKind.LEAKY:
            return TransferFunction(1.0 - phi, phi, float(gates['omega']), 0.0)
        if kind is CellKind.LEAKY_LP:
            return TransferFunction(1.0 - phi, phi, float(gates['omega0']), float(gates['omega1']))
        if kind is CellKind.TYPE_B:
            return TransferFunction(1.0 - phi, phi, 0.5, 0.5)
        g2, g3 = float(gates['gamma2']), float(gates['gamma3'])
        if kind is CellKind.TYPE_C:
            return TransferFunction(1.0 - phi, phi * float(gates['gamma4']), g2, g3)
        if kind is CellKind.TYPE_D:
            return TransferFunction(1.0 - phi, phi, g3 * g2, g3 * (1.0 - g2))
        if kind is CellKind.TYPE_E:
            return TransferFunction(1.0 - phi, phi, g2 + g3, -g3)
    except KeyError as e:
        raise ContractViolation(f"{kind.value} transfer function needs gate {e}") from None
    raise ContractViolation(f"{kind.value} has an untied input gate; no bounded transfer function")


# Type E settings (gamma1; gamma2; gamma3) that act as low-, all- and highpass
PID_PRESETS = {
    'lowpass': {'phi': 0.5, 'gamma2': 0.9, 'gamma3': 0.1},
    'allpass': {'phi': 0.5, 'gamma2': 0.5, 'gamma3': 0.5},
    'highpass': {'phi': 0.5, 'gamma2': 0.1, 'gamma3': 0.9},
}


def write_spectrum_csv(path, frequency: np.ndarray, values: np.ndarray) -> Path:
    """Two-column CSV: frequency, magnitude"""
    path = Path(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['frequency', 'magnitude'])
        for freq, value in zip(frequency, values):
            writer.writerow([repr(float(freq)), repr(float(value))])
    return path
