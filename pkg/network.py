#!/usr/bin/env python3
"""
Hierarchical multi-directional RNN for image transcription
Multi-directional recurrent layers, block subsampling, tanh layers and a collapsing softmax output
trained per sample with CTC and full BPTT
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from autodiff import Tape, TapeOps, Var, finite_diff_check
from cells import CellKind, cell_equations, forget_columns, gate_layout, parse_kind, split_units, unit_count
from ctc import best_path_decode, corpus_label_error_rate, ctc_logit_gradient
from data import Sample
from errors import ContractViolation, DivergedRunError, InfeasibleTargetError
from lattice import all_directions, wavefront_plan

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'mdrnn-model'
MODEL_VERSION = 1


@dataclass(frozen=True)
class MDLayerSpec:
    """Multi-directional recurrent layer: 2^D sublayers of `cells` cells each"""
    kind: CellKind
    cells: int


@dataclass(frozen=True)
class FeedForwardSpec:
    """Per-position tanh layer"""
    width: int


@dataclass(frozen=True)
class SubsampleSpec:
    """Concatenate the features of each height x width block"""
    height: int
    width: int


@dataclass(frozen=True)
class OutputSpec:
    """Vertical collapse followed by a softmax over `labels` (blank last)"""
    labels: int


LayerSpec = Union[MDLayerSpec, FeedForwardSpec, SubsampleSpec, OutputSpec]


def layer_from_dict(entry: Dict) -> LayerSpec:
    try:
        kind = entry['type']
        if kind == 'md':
            return MDLayerSpec(parse_kind(entry['cell']), int(entry['cells']))
        if kind == 'tanh':
            return FeedForwardSpec(int(entry['width']))
        if kind == 'subsample':
            height, width = entry['block']
            return SubsampleSpec(int(height), int(width))
        if kind == 'output':
            return OutputSpec(int(entry['labels']))
    except (KeyError, TypeError, ValueError) as e:
        raise ContractViolation(f"malformed layer entry {entry}: {e}") from None
    raise ContractViolation(f"unknown layer type '{entry.get('type')}'")


def layer_to_dict(layer: LayerSpec) -> Dict:
    if isinstance(layer, MDLayerSpec):
        return {'type': 'md', 'cell': layer.kind.value, 'cells': layer.cells}
    if isinstance(layer, FeedForwardSpec):
        return {'type': 'tanh', 'width': layer.width}
    if isinstance(layer, SubsampleSpec):
        return {'type': 'subsample', 'block': [layer.height, layer.width]}
    return {'type': 'output', 'labels': layer.labels}


def describe_layers(layers: Sequence[LayerSpec]) -> str:
    """Short layout string such as 'MD-leakylp/4 > sub 3x2 > tanh 12 > MD-leakylp/8 > out 4'"""
    parts = []
    for layer in layers:
        if isinstance(layer, MDLayerSpec):
            parts.append(f"MD-{layer.kind.value}/{layer.cells}")
        elif isinstance(layer, FeedForwardSpec):
            parts.append(f"tanh {layer.width}")
        elif isinstance(layer, SubsampleSpec):
            parts.append(f"sub {layer.height}x{layer.width}")
        else:
            parts.append(f"out {layer.labels}")
    return ' > '.join(parts)


@dataclass
class NetworkSpec:
    """Layer stack plus initialisation settings"""
    layers: List[LayerSpec]
    input_channels: int = 1
    seed: int = 0
    init_scale: float = 0.1
    forget_bias: float = 0.0
    dim: int = 2

    def validate(self) -> 'NetworkSpec':
        if not self.layers or not isinstance(self.layers[-1], OutputSpec):
            raise ContractViolation("the last layer must be the output layer")
        if any(isinstance(layer, OutputSpec) for layer in self.layers[:-1]):
            raise ContractViolation("only the last layer may be an output layer")
        if self.input_channels < 1:
            raise ContractViolation("input_channels must be at least 1")
        if self.init_scale < 0:
            raise ContractViolation("init_scale must be non-negative")
        if self.dim != 2:
            raise ContractViolation("image networks scan 2D lattices")
        for layer in self.layers:
            if isinstance(layer, MDLayerSpec):
                if layer.cells < 1:
                    raise ContractViolation("recurrent layers need at least one cell")
                gate_layout(layer.kind, self.dim)
            elif isinstance(layer, FeedForwardSpec) and layer.width < 1:
                raise ContractViolation("tanh layers need a positive width")
            elif isinstance(layer, SubsampleSpec) and (layer.height < 1 or layer.width < 1):
                raise ContractViolation("subsample blocks must be at least 1x1")
            elif isinstance(layer, OutputSpec) and layer.labels < 2:
                raise ContractViolation("the output layer needs at least one label plus blank")
        return self

    @property
    def labels(self) -> int:
        return self.layers[-1].labels

    def to_dict(self) -> Dict:
        return {
            'layers': [layer_to_dict(layer) for layer in self.layers],
            'input_channels': self.input_channels,
            'seed': self.seed,
            'init_scale': self.init_scale,
            'forget_bias': self.forget_bias,
            'dim': self.dim,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'NetworkSpec':
        return cls(
            layers=[layer_from_dict(entry) for entry in data['layers']],
            input_channels=int(data.get('input_channels', 1)),
            seed=int(data.get('seed', 0)),
            init_scale=float(data.get('init_scale', 0.1)),
            forget_bias=float(data.get('forget_bias', 0.0)),
            dim=int(data.get('dim', 2)),
        ).validate()


def default_spec(labels: int = 4, cell: str = 'leakylp', seed: int = 0) -> NetworkSpec:
    """Two recurrent layers around a 3x2 subsample and a tanh layer"""
    kind = parse_kind(cell)
    return NetworkSpec(layers=[
        MDLayerSpec(kind, 4),
        SubsampleSpec(3, 2),
        FeedForwardSpec(12),
        MDLayerSpec(kind, 8),
        OutputSpec(labels),
    ], seed=seed).validate()


def parameter_shapes(spec: NetworkSpec) -> List[Tuple[str, Tuple[int, ...]]]:
    """Ordered parameter names and shapes"""
    shapes = []
    features = spec.input_channels
    directions = 2 ** spec.dim
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, MDLayerSpec):
            width = unit_count(layer.kind, spec.dim) * layer.cells
            shapes.append((f"layer{i}.w_in", (directions, features, width)))
            shapes.append((f"layer{i}.w_rec", (directions, spec.dim * layer.cells, width)))
            shapes.append((f"layer{i}.bias", (directions, width)))
            features = directions * layer.cells
        elif isinstance(layer, SubsampleSpec):
            features *= layer.height * layer.width
        elif isinstance(layer, FeedForwardSpec):
            shapes.append((f"layer{i}.w", (features, layer.width)))
            shapes.append((f"layer{i}.b", (layer.width,)))
            features = layer.width
        else:
            shapes.append((f"layer{i}.w", (features, layer.labels)))
            shapes.append((f"layer{i}.b", (layer.labels,)))
    return shapes


def parameter_count(spec: NetworkSpec) -> int:
    """
    Closed-form parameter count

    MD layer with C inputs, N cells, G units per cell: 2^D (C G N + D N G N + G N);
    tanh layer: C W + W; output layer: C K + K.
    """
    total = 0
    features = spec.input_channels
    directions = 2 ** spec.dim
    for layer in spec.layers:
        if isinstance(layer, MDLayerSpec):
            g, n = unit_count(layer.kind, spec.dim), layer.cells
            total += directions * (features * g * n + spec.dim * n * g * n + g * n)
            features = directions * n
        elif isinstance(layer, SubsampleSpec):
            features *= layer.height * layer.width
        elif isinstance(layer, FeedForwardSpec):
            total += features * layer.width + layer.width
            features = layer.width
        else:
            total += features * layer.labels + layer.labels
    return total


def output_length(spec: NetworkSpec, height: int, width: int) -> int:
    """Number of posterior frames T for an image of the given size"""
    for layer in spec.layers:
        if isinstance(layer, SubsampleSpec):
            height = math.ceil(height / layer.height)
            width = math.ceil(width / layer.width)
    return width


@dataclass
class Model:
    """Network spec, weights and training metadata"""
    spec: NetworkSpec
    params: Dict[str, np.ndarray]
    epoch: int = 0
    learning_rate: Optional[float] = None

    def copy(self) -> 'Model':
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()}, self.epoch, self.learning_rate)

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())


def build(spec: NetworkSpec) -> Model:
    """
    Draw initial weights uniform in [-init_scale, init_scale]

    Biases start at 0 except the forget-gate biases of recurrent layers,
    which start at spec.forget_bias.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith('.bias') or name.endswith('.b'):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-spec.init_scale, spec.init_scale, size=shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, MDLayerSpec):
            columns = forget_columns(layer.kind, spec.dim, layer.cells)
            if columns is not None:
                params[f"layer{i}.bias"][:, columns] = spec.forget_bias
    logger.info(f"Built network {describe_layers(spec.layers)} with {parameter_count(spec)} parameters")
    return Model(spec, params)


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def md_layer(tape: Tape, x: Var, w_in: Var, w_rec: Var, bias: Var, kind: CellKind, cells: int,
             label: str = 'md') -> Var:
    """
    Multi-directional recurrent layer over a D-dimensional lattice

    Every direction is handled by flipping the input so that all 2^D
    sublayers scan forward together; each anti-diagonal wavefront is one
    batched update.

    Args:
        tape: Tape to record on
        x: Input features (*shape, C)
        w_in: (2^D, C, G*cells) feed-forward weights
        w_rec: (2^D, D*cells, G*cells) recurrent weights, predecessor dimension major
        bias: (2^D, G*cells)
        kind: Cell kind
        cells: Cells per direction

    Returns:
        Features (*shape, 2^D * cells), direction blocks in all_directions order
    """
    shape = tuple(x.shape[:-1])
    dim = len(shape)
    directions = all_directions(dim)
    nd = len(directions)
    channels = x.shape[-1]
    width = unit_count(kind, dim) * cells
    if tuple(w_in.shape) != (nd, channels, width) or tuple(w_rec.shape) != (nd, dim * cells, width) \
            or tuple(bias.shape) != (nd, width):
        raise ContractViolation(f"weight shapes do not fit a {kind.value} layer of {cells} cells on {shape}")

    ops = TapeOps(tape)
    size = int(np.prod(shape))
    oriented = [tape.flip(x, [d for d, s in enumerate(direction) if s < 0]) for direction in directions]
    inputs = tape.stack(oriented, axis=0).reshape((nd, size, channels))
    bias_rows = bias.reshape((nd, 1, width))

    states: List[Var] = []
    outputs: List[Var] = []
    plan = wavefront_plan(shape)
    for k, wave in enumerate(plan):
        tape.context = f"{label} wavefront {k}"
        batch = len(wave.positions)
        net = tape.matmul(tape.take(inputs, wave.positions, axis=1), w_in) + bias_rows
        if k == 0:
            previous = tape.constant(np.zeros((nd, batch, cells, dim)))
        else:
            slots = wave.predecessors.reshape(-1)
            prev_y = tape.take(outputs[-1], slots, axis=1).reshape((nd, batch, dim * cells))
            net = net + tape.matmul(prev_y, w_rec)
            previous = tape.take(states[-1], slots, axis=1).reshape((nd, batch, dim, cells)).transpose((0, 1, 3, 2))
        cin, gates = split_units(net, kind, dim, cells, ops)
        s, y = cell_equations(kind, cin, gates, previous, ops)
        states.append(s)
        outputs.append(y)
    tape.context = ''

    order = np.concatenate([wave.positions for wave in plan])
    lattice_order = tape.take(tape.concat(outputs, axis=1), np.argsort(order), axis=1)
    grid = lattice_order.reshape((nd,) + shape + (cells,))
    blocks = [tape.flip(grid[i], [d for d, s in enumerate(direction) if s < 0])
              for i, direction in enumerate(directions)]
    return tape.concat(blocks, axis=-1)


def subsample(tape: Tape, x: Var, height: int, width: int) -> Var:
    """Zero-pad to whole blocks and concatenate each block's features"""
    rows, cols, features = x.shape
    out_rows, out_cols = math.ceil(rows / height), math.ceil(cols / width)
    padded = tape.pad(x, ((0, out_rows * height - rows), (0, out_cols * width - cols), (0, 0)))
    blocks = padded.reshape((out_rows, height, out_cols, width, features)).transpose((0, 2, 1, 3, 4))
    return blocks.reshape((out_rows, out_cols, height * width * features))


def network_logits(tape: Tape, spec: NetworkSpec, params: Dict[str, Var], image: np.ndarray) -> Var:
    """Record the whole network on a tape and return the T x K logits"""
    x = tape.constant(image)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, MDLayerSpec):
            x = md_layer(tape, x, params[f"layer{i}.w_in"], params[f"layer{i}.w_rec"], params[f"layer{i}.bias"],
                         layer.kind, layer.cells, label=f"layer {i}")
        elif isinstance(layer, SubsampleSpec):
            x = subsample(tape, x, layer.height, layer.width)
        elif isinstance(layer, FeedForwardSpec):
            x = tape.tanh(tape.matmul(x, params[f"layer{i}.w"]) + params[f"layer{i}.b"])
        else:
            collapsed = tape.sum(x, axis=0)
            x = tape.matmul(collapsed, params[f"layer{i}.w"]) + params[f"layer{i}.b"]
    return x


def _prepare_image(spec: NetworkSpec, image) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ContractViolation(f"expected a non-empty H x W (x C) image, got shape {image.shape}")
    if image.shape[2] != spec.input_channels:
        raise ContractViolation(f"expected {spec.input_channels} channels, got {image.shape[2]}")
    if np.any(image < 0.0) or np.any(image > 1.0):
        raise ContractViolation("image values must lie in [0, 1]")
    return image


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def forward(model: Model, image) -> np.ndarray:
    """
    Label posteriors for one image

    Returns:
        T x K array, rows summing to one, blank last
    """
    image = _prepare_image(model.spec, image)
    tape = Tape()
    params = {name: tape.constant(value) for name, value in model.params.items()}
    return _softmax(network_logits(tape, model.spec, params, image).value)


def sample_gradient(model: Model, sample: Sample) -> Tuple[float, Dict[str, np.ndarray]]:
    """CTC loss of one sample and its full BPTT gradient"""
    image = _prepare_image(model.spec, sample.image)
    tape = Tape()
    names = list(model.params)
    variables = [tape.variable(model.params[name], name=name) for name in names]
    logits = network_logits(tape, model.spec, dict(zip(names, variables)), image)
    loss, logit_grad = ctc_logit_gradient(_softmax(logits.value), sample.target)
    loss_var = tape.custom(np.array(loss), [logits], lambda g: (g * logit_grad,), 'ctc')
    grads = tape.gradient(loss_var, variables)
    return loss, dict(zip(names, grads))


def evaluate(model: Model, samples: Sequence[Sample]) -> Dict[str, float]:
    """Best-path label error rate over a corpus"""
    pairs = [(best_path_decode(forward(model, sample.image)), sample.target) for sample in samples]
    return corpus_label_error_rate(pairs)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainingLog:
    """Per-epoch record of one training run"""
    rows: List[Dict] = field(default_factory=list)
    status: str = 'ok'
    error: Optional[str] = None
    best_ler: float = float('inf')
    best_epoch: int = 0
    best_params: Optional[Dict[str, np.ndarray]] = None
    skipped_samples: int = 0

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['epoch', 'train_loss', 'valid_ler', 'valid_ler_macro'])
            for row in self.rows:
                writer.writerow([
                    row['epoch'],
                    '' if row['train_loss'] is None else repr(row['train_loss']),
                    repr(row['valid_ler']),
                    repr(row['valid_ler_macro']),
                ])
        return path


def train_sgd(model: Model, train: Sequence[Sample], valid: Sequence[Sample], delta: float, epochs: int,
              momentum: float = 0.9, seed: Optional[int] = None) -> TrainingLog:
    """
    Per-sample gradient descent with full BPTT gradients

    Epoch 0 records the untrained validation error. Samples are visited in a
    fresh permutation each epoch drawn from `seed` (default: NetworkSpec.seed).
    A NaN/Inf anywhere marks the run diverged and stops it.

    Args:
        model: Model to update in place
        train: Training samples
        valid: Validation samples
        delta: Learning rate
        epochs: Passes over the training set
        momentum: Velocity decay, 0 for plain SGD

    Returns:
        TrainingLog with per-epoch loss and validation LER and the best weights
    """
    if delta < 0:
        raise ContractViolation(f"learning rate must be non-negative, got {delta}")
    if epochs < 0:
        raise ContractViolation(f"epochs must be non-negative, got {epochs}")
    if not 0.0 <= momentum < 1.0:
        raise ContractViolation(f"momentum must lie in [0, 1), got {momentum}")
    rng = np.random.default_rng(model.spec.seed if seed is None else seed)
    model.learning_rate = delta
    velocity = {name: np.zeros_like(value) for name, value in model.params.items()}
    log = TrainingLog()

    def record(epoch: int, train_loss: Optional[float]):
        scores = evaluate(model, valid) if valid else {'micro': float('nan'), 'macro': float('nan')}
        log.rows.append({'epoch': epoch, 'train_loss': train_loss,
                         'valid_ler': scores['micro'], 'valid_ler_macro': scores['macro']})
        if scores['micro'] < log.best_ler or log.best_params is None:
            log.best_ler = scores['micro']
            log.best_epoch = epoch
            log.best_params = {k: v.copy() for k, v in model.params.items()}
        return scores['micro']

    try:
        record(0, None)
        for epoch in range(1, epochs + 1):
            total, counted = 0.0, 0
            for index in rng.permutation(len(train)):
                sample = train[index]
                try:
                    loss, grads = sample_gradient(model, sample)
                except InfeasibleTargetError as e:
                    log.skipped_samples += 1
                    logger.warning(f"Skipping {sample.id}: {e}")
                    continue
                for name, grad in grads.items():
                    velocity[name] = momentum * velocity[name] - delta * grad
                    model.params[name] += velocity[name]
                total += loss
                counted += 1
            model.epoch = epoch
            train_loss = total / counted if counted else float('nan')
            ler = record(epoch, train_loss)
            logger.info(f"Epoch {epoch}: train loss {train_loss:.4f}, valid LER {ler:.4f}")
    except DivergedRunError as e:
        log.status = 'diverged'
        log.error = str(e)
        logger.error(f"Run diverged: {e}")
    return log


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------

DEFAULT_CHECK_SHAPES = {1: (5,), 2: (5, 5), 3: (5, 5, 4)}


def gradient_check(kind, dim: int, seed: int = 0, shape: Optional[Sequence[int]] = None, cells: int = 2,
                   channels: int = 2, scale: float = 0.5, coordinates: Optional[int] = 32,
                   step: float = 1e-6) -> float:
    """
    Finite-difference check of a random multi-directional layer

    The loss is a fixed random projection of the layer output; weights and the
    input lattice are differentiated together.

    Returns:
        Worst relative error over the checked coordinates
    """
    kind = parse_kind(kind)
    shape = tuple(shape) if shape is not None else DEFAULT_CHECK_SHAPES.get(dim, (3,) * dim)
    if len(shape) != dim:
        raise ContractViolation(f"shape {shape} does not have {dim} dimensions")
    nd = 2 ** dim
    width = unit_count(kind, dim) * cells
    rng = np.random.default_rng(seed)
    parts = [
        ('w_in', (nd, channels, width)),
        ('w_rec', (nd, dim * cells, width)),
        ('bias', (nd, width)),
        ('x', shape + (channels,)),
    ]
    theta = np.concatenate([
        rng.uniform(-scale, scale, size=int(np.prod(s))) if name != 'x' else rng.uniform(-1.0, 1.0, size=int(np.prod(s)))
        for name, s in parts
    ])
    projection = rng.uniform(-1.0, 1.0, size=shape + (nd * cells,))

    def loss(tape: Tape, flat: Var) -> Var:
        pieces = {}
        offset = 0
        for name, s in parts:
            n = int(np.prod(s))
            pieces[name] = flat[offset:offset + n].reshape(s)
            offset += n
        y = md_layer(tape, pieces['x'], pieces['w_in'], pieces['w_rec'], pieces['bias'], kind, cells)
        return tape.sum(y * projection)

    error = finite_diff_check(loss, theta, step=step, coordinates=coordinates, seed=seed)
    logger.info(f"Gradient check {kind.value} D={dim} on {shape}: worst relative error {error:.3e}")
    return error


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(model: Model, path) -> Path:
    """One JSON header line followed by the little-endian float64 weights"""
    path = Path(path)
    header = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'spec': model.spec.to_dict(),
        'epoch': model.epoch,
        'learning_rate': model.learning_rate,
        'parameters': [[name, list(value.shape)] for name, value in model.params.items()],
    }
    blob = b''.join(np.ascontiguousarray(value, dtype='<f8').tobytes() for value in model.params.values())
    path.write_bytes(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n' + blob)
    return path


def load_model(path) -> Model:
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b'\n')
    if newline < 0:
        raise ContractViolation(f"{path} has no model header")
    try:
        header = json.loads(raw[:newline].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContractViolation(f"{path} has an unreadable model header: {e}") from None
    if header.get('format') != MODEL_FORMAT or header.get('version') != MODEL_VERSION:
        raise ContractViolation(f"{path} is not a version {MODEL_VERSION} {MODEL_FORMAT} file")

    spec = NetworkSpec.from_dict(header['spec'])
    expected = dict(parameter_shapes(spec))
    blob = raw[newline + 1:]
    if len(blob) % 8:
        raise ContractViolation(f"{path} weight blob is {len(blob)} bytes, not a whole number of float64 values")
    wanted = 8 * sum(int(np.prod(shape)) for shape in expected.values())
    if len(blob) != wanted:
        raise ContractViolation(f"{path} weight blob is {len(blob)} bytes, spec expects {wanted}")
    values = np.frombuffer(blob, dtype='<f8')
    params = {}
    offset = 0
    for name, shape in header['parameters']:
        shape = tuple(shape)
        if expected.get(name) != shape:
            raise ContractViolation(f"parameter {name} has shape {shape}, spec expects {expected.get(name)}")
        size = int(np.prod(shape))
        if offset + size > values.size:
            raise ContractViolation(f"{path} weight blob is truncated")
        params[name] = values[offset:offset + size].astype(float).reshape(shape)
        offset += size
    if offset != values.size or set(params) != set(expected):
        raise ContractViolation(f"{path} weight blob does not match its header")
    return Model(spec, params, int(header.get('epoch', 0)), header.get('learning_rate'))
