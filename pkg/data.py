#!/usr/bin/env python3
"""
Synthetic transcription corpora
Deterministic stroke-glyph images with label sequences, stored as P5 graymaps plus index.tsv
"""

import itertools
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolation, CorpusError

logger = logging.getLogger(__name__)

INDEX_FILE = 'index.tsv'
STROKES = ('hbar', 'vbar', 'diagonal', 'antidiagonal', 'top', 'bottom', 'left', 'right')


@dataclass
class Sample:
    """One image and its label sequence"""
    image: np.ndarray
    target: Tuple[int, ...]
    id: str

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.id == other.id and self.target == other.target
                and self.image.shape == other.image.shape and np.array_equal(self.image, other.image))


def _stroke(name: str, size: int, thickness: int) -> np.ndarray:
    box = np.zeros((size, size))
    mid = (size - thickness) // 2
    rows, cols = np.indices((size, size))
    if name == 'hbar':
        box[mid:mid + thickness, :] = 1.0
    elif name == 'vbar':
        box[:, mid:mid + thickness] = 1.0
    elif name == 'diagonal':
        box[np.abs(rows - cols) < thickness] = 1.0
    elif name == 'antidiagonal':
        box[np.abs(rows + cols - (size - 1)) < thickness] = 1.0
    elif name == 'top':
        box[:thickness, :] = 1.0
    elif name == 'bottom':
        box[size - thickness:, :] = 1.0
    elif name == 'left':
        box[:, :thickness] = 1.0
    else:
        box[:, size - thickness:] = 1.0
    return box


def glyph_strokes(label: int) -> Tuple[str, ...]:
    """Strokes of a label: single strokes first, then pairs, triples, ..."""
    index = label
    for r in range(1, len(STROKES) + 1):
        combos = list(itertools.combinations(STROKES, r))
        if index < len(combos):
            return combos[index]
        index -= len(combos)
    raise ContractViolation(f"label {label} exceeds the {2 ** len(STROKES) - 1} available glyphs")


def render_glyph(label: int, size: int) -> np.ndarray:
    thickness = max(1, size // 6)
    glyph = np.zeros((size, size))
    for name in glyph_strokes(label):
        glyph = np.maximum(glyph, _stroke(name, size, thickness))
    return glyph


def canvas_shape(glyph_size: int, max_length: int, jitter: int, margin: int, gap: int) -> Tuple[int, int]:
    """Default image height and width for a generator configuration"""
    return 2 * glyph_size, margin + max_length * (glyph_size + gap) + jitter


def gen_synthetic(seed: int, count: int, alphabet_size: int = 3, glyph_size: int = 12,
                  length_range: Tuple[int, int] = (1, 4), noise: float = 0.1, jitter: int = 2,
                  margin: int = 2, gap: int = 2, id_prefix: str = 'sample') -> List[Sample]:
    """
    Render random label sequences as left-to-right stroke glyphs

    Args:
        seed: Generator seed
        count: Number of samples
        alphabet_size: Labels 0..A-1
        glyph_size: Side of a glyph box in pixels
        length_range: Inclusive range of sequence lengths
        noise: Amplitude of additive uniform noise
        jitter: Each glyph is offset by 0..jitter pixels in both axes
        margin: Left margin in pixels
        gap: Horizontal space between glyph boxes

    Returns:
        Samples with pixels on the 8-bit grid k/255
    """
    lo, hi = (int(v) for v in length_range)
    if alphabet_size < 2:
        raise ContractViolation(f"alphabet size must be at least 2, got {alphabet_size}")
    if not 1 <= lo <= hi:
        raise ContractViolation(f"invalid length range {length_range}")
    if glyph_size < 3 or jitter < 0 or noise < 0:
        raise ContractViolation("glyph_size >= 3, jitter >= 0 and noise >= 0 are required")
    glyphs = [render_glyph(label, glyph_size) for label in range(alphabet_size)]
    height, width = canvas_shape(glyph_size, hi, jitter, margin, gap)
    top = (height - glyph_size - jitter) // 2

    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        length = int(rng.integers(lo, hi + 1))
        target = tuple(int(label) for label in rng.integers(0, alphabet_size, size=length))
        image = np.zeros((height, width))
        for position, label in enumerate(target):
            dy, dx = (int(v) for v in rng.integers(0, jitter + 1, size=2))
            y0 = top + dy
            x0 = margin + position * (glyph_size + gap) + dx
            region = image[y0:y0 + glyph_size, x0:x0 + glyph_size]
            np.maximum(region, glyphs[label], out=region)
        if noise > 0:
            image = np.clip(image + rng.uniform(-noise, noise, size=image.shape), 0.0, 1.0)
        image = np.round(image * 255.0) / 255.0
        samples.append(Sample(image=image, target=target, id=f"{id_prefix}{i:05d}"))
    logger.info(f"Generated {count} synthetic samples ({height}x{width}, A={alphabet_size})")
    return samples


def split_corpus(samples: Sequence[Sample], n_train: int, n_valid: int) -> Tuple[List[Sample], List[Sample]]:
    """First n_train samples for training, the next n_valid for validation"""
    if n_train < 0 or n_valid < 0 or n_train + n_valid > len(samples):
        raise ContractViolation(f"cannot split {len(samples)} samples into {n_train} + {n_valid}")
    return list(samples[:n_train]), list(samples[n_train:n_train + n_valid])


# ---------------------------------------------------------------------------
# P5 graymaps
# ---------------------------------------------------------------------------

_HEADER_TOKEN = re.compile(rb'\s*(#[^\n]*\n\s*)*(\S+)')


def read_pgm(path) -> np.ndarray:
    """Binary portable graymap, normalised to [0, 1]"""
    path = Path(path)
    raw = path.read_bytes()
    tokens = []
    offset = 0
    for _ in range(4):
        match = _HEADER_TOKEN.match(raw, offset)
        if match is None:
            raise CorpusError("truncated graymap header", path=str(path))
        tokens.append(match.group(2))
        offset = match.end()
    if tokens[0] != b'P5':
        raise CorpusError(f"expected P5 magic, got {tokens[0]!r}", path=str(path))
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorpusError("non-numeric graymap header", path=str(path)) from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise CorpusError(f"invalid graymap geometry {width}x{height} maxval {maxval}", path=str(path))

    dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
    body = raw[offset + 1:]
    expected = width * height * dtype.itemsize
    if len(body) < expected:
        raise CorpusError(f"graymap body has {len(body)} bytes, expected {expected}", path=str(path))
    pixels = np.frombuffer(body[:expected], dtype=dtype).reshape(height, width)
    if pixels.max() > maxval:
        raise CorpusError(f"pixel value {int(pixels.max())} exceeds maxval {maxval}", path=str(path))
    return pixels.astype(float) / maxval


def write_pgm(path, image: np.ndarray) -> Path:
    """8-bit binary portable graymap of an image in [0, 1]"""
    path = Path(path)
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ContractViolation(f"graymap images must be 2D, got shape {image.shape}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype('u1')
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode('ascii')
    path.write_bytes(header + pixels.tobytes())
    return path


def save_corpus(samples: Sequence[Sample], directory) -> Path:
    """Write <id>.pgm images and index.tsv"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for sample in samples:
        write_pgm(directory / f"{sample.id}.pgm", sample.image)
        lines.append(f"{sample.id}\t{','.join(str(label) for label in sample.target)}\n")
    with open(directory / INDEX_FILE, 'w', encoding='utf-8', newline='') as f:
        f.writelines(lines)
    logger.info(f"Saved {len(samples)} samples to {directory}")
    return directory


def _parse_index_line(line: str, path: Path, number: int, alphabet_size: Optional[int]) -> Tuple[str, Tuple[int, ...]]:
    parts = line.rstrip('\r\n').split('\t')
    if len(parts) != 2 or not parts[0]:
        raise CorpusError("expected 'id<TAB>label,label,...'", path=str(path), line=number)
    sample_id, labels = parts
    try:
        target = tuple(int(label) for label in labels.split(',')) if labels else ()
    except ValueError:
        raise CorpusError(f"non-integer label in '{labels}'", path=str(path), line=number) from None
    limit = alphabet_size if alphabet_size is not None else None
    if any(label < 0 or (limit is not None and label >= limit) for label in target):
        raise CorpusError(f"label outside alphabet in '{labels}'", path=str(path), line=number)
    return sample_id, target


def load_corpus(directory, alphabet_size: Optional[int] = None, strict: bool = True) -> List[Sample]:
    """
    Read a corpus directory written by save_corpus

    Args:
        directory: Folder with index.tsv and <id>.pgm files
        alphabet_size: Reject labels >= this when given
        strict: Raise on the first bad record; otherwise log it and skip

    Returns:
        Samples in index order
    """
    directory = Path(directory)
    index = directory / INDEX_FILE
    try:
        text = index.read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as e:
        raise CorpusError(f"cannot read index: {e}", path=str(index)) from None

    samples = []
    skipped = 0
    for number, line in enumerate(text.splitlines(keepends=True), 1):
        if not line.strip():
            continue
        try:
            sample_id, target = _parse_index_line(line, index, number, alphabet_size)
            image_path = directory / f"{sample_id}.pgm"
            if not image_path.exists():
                raise CorpusError(f"missing image {image_path.name}", path=str(index), line=number)
            samples.append(Sample(image=read_pgm(image_path), target=target, id=sample_id))
        except CorpusError as e:
            if strict:
                raise
            skipped += 1
            logger.error(f"Skipping corpus record: {e}")
    logger.info(f"Loaded {len(samples)} samples from {directory}" + (f", skipped {skipped}" if skipped else ''))
    return samples
