"""Synthetic PPM datasets standing in for the upstream and downstream corpora.

``shapes-4class``: filled square, square outline, filled triangle, triangle
outline. ``ring-vs-disk-2class``: filled disk (class ``disk``) against an
annulus (class ``ring``). Every image has a random background, a random
foreground colour with guaranteed contrast, random position and size, and
additive Gaussian noise, all drawn from one PCG32 stream.
"""

from pathlib import Path

import numpy as np

from minibit.data import save_ppm
from minibit.errors import ConfigError
from minibit.tensor import Prng

TASKS = {
    "shapes-4class": ["square", "square_outline", "triangle", "triangle_outline"],
    "ring-vs-disk-2class": ["disk", "ring"],
}
NOISE_STD = 0.08


def _colours(rng):
    bg = rng.uniform_array(3, 0.0, 1.0)
    while True:
        fg = rng.uniform_array(3, 0.0, 1.0)
        if np.abs(fg - bg).mean() > 0.3:
            return bg, fg


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy + 0.5, xx + 0.5


def _triangle_mask(yy, xx, cy, cx, r):
    # upright isosceles triangle inscribed in a circle of radius r
    top = cy - r
    base = cy + 0.5 * r
    half = 0.866 * r
    frac = (yy - top) / (base - top)
    inside = (yy >= top) & (yy <= base)
    return inside & (np.abs(xx - cx) <= frac * half)


def shape_mask(kind, size, rng):
    yy, xx = _grid(size)
    r = size * (0.18 + 0.14 * rng.uniform())
    margin = r + 1.0
    cy = margin + (size - 2 * margin) * rng.uniform()
    cx = margin + (size - 2 * margin) * rng.uniform()
    thick = max(1.5, r * (0.25 + 0.15 * rng.uniform()))
    if kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "ring":
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return (d2 <= r * r) & (d2 >= (r - thick) ** 2)
    if kind in ("square", "square_outline"):
        h = r * 0.85
        outer = (np.abs(yy - cy) <= h) & (np.abs(xx - cx) <= h)
        if kind == "square":
            return outer
        inner = (np.abs(yy - cy) <= h - thick) & (np.abs(xx - cx) <= h - thick)
        return outer & ~inner
    if kind in ("triangle", "triangle_outline"):
        outer = _triangle_mask(yy, xx, cy, cx, r)
        if kind == "triangle":
            return outer
        inner = _triangle_mask(yy, xx, cy + 0.35 * thick, cx, r - 2.0 * thick)
        return outer & ~inner
    raise ConfigError(f"unknown shape kind {kind!r}")


def render(kind, size, rng):
    bg, fg = _colours(rng)
    mask = shape_mask(kind, size, rng)
    img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
    img = img + NOISE_STD * rng.normal_array(3 * size * size).reshape(3, size, size)
    return np.clip(img, 0.0, 1.0)


def label_plan(task, n, balance=0.5):
    """Deterministic label sequence; ``balance`` is the class-1 share for 2-class tasks."""
    k = len(TASKS[task])
    if k == 2:
        n1 = int(round(n * balance))
        labels = [1] * n1 + [0] * (n - n1)
    else:
        labels = [i % k for i in range(n)]
    return labels


def write_split(task, out_dir, n, rng, size=32, balance=0.5):
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    if n < 1:
        raise ConfigError("--n must be >= 1")
    names = TASKS[task]
    out_dir = Path(out_dir)
    for name in names:
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    labels = label_plan(task, n, balance)
    # shuffle class order so indices do not encode labels
    order = rng.permutation(n)
    for idx, j in enumerate(order):
        kind = names[labels[j]]
        save_ppm(out_dir / kind / f"{idx:05d}.ppm", render(kind, size, rng))
    return out_dir


def generate(task, out_dir, n, seed, val_n=0, size=32, balance=0.5):
    """Write ``<out>/train`` (and ``<out>/val`` when ``val_n`` > 0)."""
    rng = Prng(seed)
    out_dir = Path(out_dir)
    write_split(task, out_dir / "train", n, rng, size, balance)
    if val_n:
        write_split(task, out_dir / "val", val_n, rng, size, balance)
    return out_dir
