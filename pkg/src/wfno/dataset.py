"""Bundled desk-scale dataset: procedural texture patches.

Each patch layers octaves of smooth value noise (coarse random grids
upsampled bicubically, 1/f amplitudes) with one oriented soft edge, so the
corpus has both broadband texture and the directional structure
super-resolution cares about. Everything derives from one integer seed;
regenerating into a directory is idempotent.

Run ``python3 -m wfno.dataset DIR`` to (re)write the PNGs.
"""

from __future__ import annotations

import os

import numpy as np

from . import fileio, tensor_ops

PATCH_COUNT = 32
PATCH_SIZE = 32
DATASET_SEED = 20240915


def _value_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Sum of bicubically upsampled random grids at frequencies 4, 8, 16."""
    out = np.zeros((size, size, 3))
    amp = 1.0
    for cells in (4, 8, 16):
        coarse = rng.standard_normal((cells, cells, 3))
        out += amp * tensor_ops.bicubic_resize(coarse, size, size)
        amp *= 0.5
    return out


def _oriented_edge(rng: np.random.Generator, size: int) -> np.ndarray:
    """Soft step edge with random orientation, offset, and sharpness."""
    theta = rng.uniform(0.0, np.pi)
    offset = rng.uniform(0.3, 0.7) * size
    width = rng.uniform(0.6, 2.5)
    yy, xx = np.mgrid[0:size, 0:size]
    d = (np.cos(theta) * xx + np.sin(theta) * yy - offset) / width
    edge = 1.0 / (1.0 + np.exp(-d))
    tint = rng.uniform(-0.5, 0.5, size=3)
    return edge[..., None] * tint


def make_patch(index: int, size: int = PATCH_SIZE, seed: int = DATASET_SEED) -> np.ndarray:
    """Deterministic (size, size, 3) patch in [0, 1] for the given index."""
    rng = np.random.default_rng(seed + index)
    img = 0.35 * _value_noise(rng, size) + _oriented_edge(rng, size)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.full_like(img, 0.5)
    return 0.05 + 0.9 * img


def generate_patches(count: int = PATCH_COUNT, size: int = PATCH_SIZE,
                     seed: int = DATASET_SEED) -> list:
    return [make_patch(i, size, seed) for i in range(count)]


def write_dataset(out_dir: str, count: int = PATCH_COUNT, size: int = PATCH_SIZE,
                  seed: int = DATASET_SEED) -> list:
    """Write patch_00.png .. patch_NN.png; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(generate_patches(count, size, seed)):
        p = os.path.join(out_dir, f"patch_{i:02d}.png")
        fileio.save_image(p, img)
        paths.append(p)
    return paths


def load_dataset(data_dir: str) -> list:
    """All PNG/PPM images in a directory, sorted by name."""
    names = sorted(n for n in os.listdir(data_dir)
                   if n.lower().endswith((".png", ".ppm")))
    if not names:
        raise FileNotFoundError(f"no images found in {data_dir}")
    return [fileio.load_image(os.path.join(data_dir, n)) for n in names]


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "data/patches"
    written = write_dataset(target)
    print(f"wrote {len(written)} patches to {target}")
