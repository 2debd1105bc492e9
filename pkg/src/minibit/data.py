"""Image ingestion, augmentation, MixUp and deterministic batching.

Datasets live on disk as ``<root>/<class_name>/<image>.ppm`` (binary P6,
maxval 255). Pixels are held as float32 ``[3, H, W]`` arrays in [0, 1].

Training augmentation order: resize to ``resize_to`` -> random crop to
``crop_to`` -> random horizontal flip. Evaluation resizes and centre-crops
with no random draws.
"""

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from minibit.errors import ConfigError, DatasetError, ParseError, ShapeError
from minibit.tensor import DTYPE

_WHITESPACE = b" \t\n\r\x0b\x0c"


# ---------------------------------------------------------------------------
# PPM


def _header_token(buf, pos, path):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("truncated PPM header", offset=start, path=path)
    return buf[start:pos], pos


def decode_ppm(buf, path=None):
    """Decode binary P6 bytes into a float32 ``[3, H, W]`` array."""
    if buf[:2] != b"P6":
        raise ParseError(f"bad magic {buf[:2]!r}, expected b'P6'", offset=0, path=path)
    pos = 2
    values = []
    for what in ("width", "height", "maxval"):
        tok, end = _header_token(buf, pos, path)
        if not tok.isdigit():
            raise ParseError(f"invalid {what} {tok!r}", offset=pos, path=path)
        values.append(int(tok))
        pos = end
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ParseError(f"invalid dimensions {width}x{height}", offset=2, path=path)
    if maxval != 255:
        raise ParseError(f"unsupported maxval {maxval} (only 255)", offset=pos, path=path)
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise ParseError("missing whitespace after header", offset=pos, path=path)
    pos += 1
    need = width * height * 3
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"truncated pixel data: need {need} bytes, have {len(payload)}",
                         offset=pos + len(payload), path=path)
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return (px.transpose(2, 0, 1).astype(DTYPE) / DTYPE(255.0)).astype(DTYPE)


def load_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read(), path=path)


def encode_ppm(pixels):
    """Encode a ``[3, H, W]`` array in [0, 1] as P6 bytes (rounded to nearest)."""
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W] pixels, got {pixels.shape}")
    _, h, w = pixels.shape
    px = np.clip(np.rint(np.asarray(pixels, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.transpose(1, 2, 0).tobytes()


def save_ppm(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(pixels))


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: int
    source_path: str = ""


@dataclass
class Dataset:
    items: list
    class_names: list
    split: str = "train"

    def __len__(self):
        return len(self.items)

    @property
    def labels(self):
        return np.array([it.label for it in self.items], dtype=np.int64)

    @property
    def shorter_side(self):
        return min(min(it.pixels.shape[1:]) for it in self.items)


def load_dataset_dir(root, split="train"):
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_names = sorted(d.name for d in root.iterdir() if d.is_dir())
    if not class_names:
        raise DatasetError(f"dataset root {root} has no class subdirectories")
    entries = []
    for label, name in enumerate(class_names):
        for f in (root / name).iterdir():
            if f.is_file() and f.suffix.lower() == ".ppm":
                entries.append((str(f), label))
    if not entries:
        raise DatasetError(f"dataset root {root} contains no .ppm images")
    entries.sort(key=lambda e: e[0])
    items = []
    for path, label in entries:
        try:
            items.append(LabeledImage(load_ppm(path), label, path))
        except (OSError, ParseError) as exc:
            raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return Dataset(items, class_names, split)


# ---------------------------------------------------------------------------
# Geometry


def _interp_axis(a, axis, target):
    """Linear interpolation along one axis, align-corners=False."""
    src = a.shape[axis]
    if src == target:
        return a
    pos = (np.arange(target, dtype=np.float64) + 0.5) * (src / target) - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    t = pos - lo
    shape = [1] * a.ndim
    shape[axis] = target
    t = t.reshape(shape)
    a_lo = np.take(a, lo, axis=axis)
    a_hi = np.take(a, hi, axis=axis)
    return a_lo + t * (a_hi - a_lo)


def resize_bilinear(pixels, target):
    """Resize ``[C, H, W]`` to ``[C, target, target]``."""
    if target < 1:
        raise ShapeError("resize target must be >= 1")
    out = _interp_axis(pixels.astype(np.float64), 1, target)
    out = _interp_axis(out, 2, target)
    return np.clip(out, 0.0, 1.0).astype(DTYPE)


def random_crop(pixels, crop_to, rng):
    _, h, w = pixels.shape
    if crop_to > h or crop_to > w:
        raise ShapeError(f"crop {crop_to} larger than image {h}x{w}")
    oy = rng.randint(0, h - crop_to)
    ox = rng.randint(0, w - crop_to)
    return pixels[:, oy:oy + crop_to, ox:ox + crop_to]


def center_crop(pixels, crop_to):
    _, h, w = pixels.shape
    if crop_to > h or crop_to > w:
        raise ShapeError(f"crop {crop_to} larger than image {h}x{w}")
    oy = (h - crop_to) // 2
    ox = (w - crop_to) // 2
    return pixels[:, oy:oy + crop_to, ox:ox + crop_to]


def hflip(pixels):
    return pixels[:, :, ::-1]


def random_hflip(pixels, prob, rng):
    """Always consumes one draw; flips when it falls below ``prob``."""
    return hflip(pixels) if rng.uniform() < prob else pixels


@dataclass
class AugmentSpec:
    resize_to: int
    crop_to: int
    hflip_prob: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.crop_to > self.resize_to:
            raise ConfigError(f"crop_to {self.crop_to} exceeds resize_to {self.resize_to}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must be in [0, 1]")


def preprocess(pixels, spec, rng=None):
    out = resize_bilinear(pixels, spec.resize_to)
    if spec.enabled:
        out = random_crop(out, spec.crop_to, rng)
        out = random_hflip(out, spec.hflip_prob, rng)
    else:
        out = center_crop(out, spec.crop_to)
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# MixUp and batching


def one_hot(labels, num_classes):
    out = np.zeros((len(labels), num_classes), dtype=DTYPE)
    out[np.arange(len(labels)), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def mixup_batch(x, y, alpha, rng, lam=None):
    """Mix a batch with a permutation of itself using one Beta(alpha, alpha) weight.

    ``lam`` overrides the draw (the permutation is still drawn). Batches of one
    are returned unchanged without consuming the generator.
    Returns ``(x_mixed, y_mixed, lam, perm)``.
    """
    if alpha <= 0:
        raise ConfigError("mixup alpha must be > 0")
    if x.shape[0] < 2:
        return x, y, 1.0, list(range(x.shape[0]))
    if lam is None:
        lam = rng.beta(alpha, alpha)
    perm = rng.permutation(x.shape[0])
    lam32 = DTYPE(lam)
    x_mix = lam32 * x + (DTYPE(1.0) - lam32) * x[perm]
    y_mix = lam32 * y + (DTYPE(1.0) - lam32) * y[perm]
    return x_mix.astype(DTYPE), y_mix.astype(DTYPE), float(lam), perm


def batch_iter(dataset, batch_size, rng=None, augment=None):
    """Yield ``(x [B,3,c,c], labels [B])`` for one pass over ``dataset``.

    With ``rng`` the order is a Fisher-Yates shuffle; without it, dataset order.
    The final partial batch is emitted.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    if len(dataset) == 0:
        raise DatasetError("cannot iterate an empty dataset")
    if augment is None:
        side = dataset.items[0].pixels.shape[1]
        augment = AugmentSpec(side, side, enabled=False)
    if augment.enabled and rng is None:
        raise ConfigError("augmentation requires a generator")
    order = rng.permutation(len(dataset)) if rng is not None else list(range(len(dataset)))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        xs = [preprocess(dataset.items[i].pixels, augment, rng) for i in idx]
        yield np.stack(xs).astype(DTYPE), np.array([dataset.items[i].label for i in idx], dtype=np.int64)


def dataset_labels_histogram(dataset):
    counts = np.bincount(dataset.labels, minlength=len(dataset.class_names))
    return {name: int(c) for name, c in zip(dataset.class_names, counts)}


def iter_files(root):
    """Every file below ``root`` as sorted relative paths (used for tree comparisons)."""
    root = Path(root)
    out = []
    for dirpath, _, files in os.walk(root):
        for f in files:
            out.append(str(Path(dirpath, f).relative_to(root)))
    return sorted(out)
