"""Synthetic paired data for smoke tests and the overfit experiment.

References are procedurally generated scenes (smooth illumination, colour
patches with hard edges, fine texture).  Inputs are derived from them by a
darkening tone curve followed by local contrast reduction, so restoring the
reference needs both a global tone change and local detail amplification.
"""
import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .imagecore import save_image


def make_reference(seed, width=128, height=128):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(width, height)
    base = np.empty((height, width, 3))
    for c in range(3):
        gx, gy = rng.uniform(-0.6, 0.6, 2)
        base[:, :, c] = 0.45 + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(6):
        cx, cy = rng.uniform(0, 1, 2)
        rx, ry = rng.uniform(0.08, 0.3, 2)
        mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
        base[mask] = 0.6 * base[mask] + 0.4 * rng.uniform(0.05, 0.95, 3)
    freq = rng.uniform(20, 40, 2)
    texture = 0.06 * np.sin(2 * np.pi * freq[0] * xx) * np.sin(2 * np.pi * freq[1] * yy)
    texture += 0.03 * gaussian_filter(rng.standard_normal((height, width)), 0.7)
    return np.clip(base + texture[:, :, None], 0.0, 1.0)


def degrade(ref, gamma=1.6, contrast=0.5, blur_sigma=3.0):
    """Tone curve ``v**gamma`` then shrink detail around a blurred base."""
    toned = ref ** gamma
    base = np.stack([gaussian_filter(toned[:, :, c], blur_sigma, mode="nearest")
                     for c in range(3)], axis=2)
    return np.clip(base + contrast * (toned - base), 0.0, 1.0)


def make_pairs(n, width=128, height=128, seed=0):
    pairs = []
    for i in range(n):
        ref = make_reference(seed * 1000 + i, width, height)
        pairs.append((degrade(ref), ref))
    return pairs


def write_dataset(root, n, width=128, height=128, seed=0):
    """Write ``root/input/*.png`` (16-bit) and ``root/reference/*.png`` (8-bit)."""
    os.makedirs(os.path.join(root, "input"), exist_ok=True)
    os.makedirs(os.path.join(root, "reference"), exist_ok=True)
    stems = []
    for i, (inp, ref) in enumerate(make_pairs(n, width, height, seed)):
        stem = f"pair{i:03d}"
        save_image(inp, os.path.join(root, "input", stem + ".png"), 16)
        save_image(ref, os.path.join(root, "reference", stem + ".png"), 8)
        stems.append(stem)
    return stems
