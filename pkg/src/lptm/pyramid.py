"""Adaptive Gaussian/Laplacian pyramids (Burt-Adelson) with exact inverse.

Level sizes halve with ceiling division, so odd dimensions are supported;
the size ladder is recorded so expansion restores the exact parent shape.
Every operation here is linear, and the ``*_adjoint`` helpers give their
transposes for backpropagation.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _linops
from .errors import ContractError
from .imagecore import as_image


@dataclass
class LaplacianPyramid:
    """Bands ``l_0..l_{N-1}`` (fine to coarse), the residual low-pass image,
    and the ``(width, height)`` of every level including the residual."""

    bands: list
    low: np.ndarray
    sizes: list = field(default_factory=list)

    @property
    def n_levels(self):
        return len(self.bands)


@dataclass
class GaussianPyramid:
    """Low-pass ladder ``G_0..G_N`` with ``G_0`` the input and ``G_N`` the residual."""

    levels: list


def _size(img):
    return (img.shape[1], img.shape[0])


def downsample(img):
    """5-tap binomial blur with replicated borders, then keep every other sample."""
    img = as_image(img)
    h, w, _ = img.shape
    return _linops.apply_separable(img, _linops.downsample_matrix(h), _linops.downsample_matrix(w))


def downsample_adjoint(grad, w, h):
    """Transpose of :func:`downsample` for a ``(h, w)`` source."""
    grad = as_image(grad)
    _check_parent(w, h, grad)
    return _linops.apply_separable(
        grad, _linops.downsample_matrix(h).T.tocsr(), _linops.downsample_matrix(w).T.tocsr())


def _check_parent(w, h, child):
    if _linops.half_size(w) != child.shape[1] or _linops.half_size(h) != child.shape[0]:
        raise ContractError(
            f"{w}x{h} is not a parent size of {child.shape[1]}x{child.shape[0]}")


def upsample_to(img, w, h):
    """Expand to the parent size ``(w, h)`` with the gain-compensated binomial kernel."""
    img = as_image(img)
    _check_parent(w, h, img)
    return _linops.apply_separable(
        img, _linops.upsample_matrix(h, img.shape[0]), _linops.upsample_matrix(w, img.shape[1]))


def upsample_to_adjoint(grad, w, h):
    """Transpose of :func:`upsample_to`; returns an image of size ``(w, h)``."""
    grad = as_image(grad)
    gh, gw, _ = grad.shape
    if _linops.half_size(gw) != w or _linops.half_size(gh) != h:
        raise ContractError(f"{w}x{h} is not the child size of {gw}x{gh}")
    return _linops.apply_separable(
        grad, _linops.upsample_matrix(gh, h).T.tocsr(), _linops.upsample_matrix(gw, w).T.tocsr())


def laplacian_step(img):
    """``img - upsample_to(downsample(img))``: one band-pass step at img's level."""
    img = as_image(img)
    return img - upsample_to(downsample(img), img.shape[1], img.shape[0])


def laplacian_step_adjoint(grad):
    grad = as_image(grad)
    h, w, _ = grad.shape
    small = upsample_to_adjoint(grad, _linops.half_size(w), _linops.half_size(h))
    return grad - downsample_adjoint(small, w, h)


def level_count(w, h, target_low=64):
    """Number of band-pass levels so the residual is roughly ``target_low`` pixels across."""
    m = min(w, h)
    if m < target_low:
        raise ContractError(f"image {w}x{h} smaller than target_low={target_low}")
    # round-half-up on log2, so 2^(k+0.5) ratios resolve deterministically
    return max(1, int(math.floor(math.log2(m / target_low) + 0.5)))


def decompose(img, target_low=64, n_levels=None):
    """Build the Laplacian pyramid and its Gaussian companion.

    ``n_levels`` overrides the adaptive depth (used to decompose a reference
    image to the same depth as the input).
    """
    img = as_image(img)
    h, w, _ = img.shape
    n = level_count(w, h, target_low) if n_levels is None else int(n_levels)
    if n < 1:
        raise ContractError("pyramid needs at least one level")
    gauss = [img]
    for _ in range(n):
        gauss.append(downsample(gauss[-1]))
    bands = []
    for k in range(n):
        gw, gh = _size(gauss[k])
        bands.append(gauss[k] - upsample_to(gauss[k + 1], gw, gh))
    sizes = [_size(g) for g in gauss]
    return LaplacianPyramid(bands, gauss[-1], sizes), GaussianPyramid(gauss)


def _check_ladder(bands, low, sizes):
    if len(sizes) != len(bands) + 1 or not bands:
        raise ContractError("size ladder must have one entry per band plus the residual")
    for k, b in enumerate(bands):
        if _size(b) != tuple(sizes[k]):
            raise ContractError(f"band {k} has size {_size(b)}, ladder says {tuple(sizes[k])}")
    if _size(low) != tuple(sizes[-1]):
        raise ContractError(f"residual has size {_size(low)}, ladder says {tuple(sizes[-1])}")
    for k in range(len(bands)):
        w, h = sizes[k]
        if (_linops.half_size(w), _linops.half_size(h)) != tuple(sizes[k + 1]):
            raise ContractError(f"level {k + 1} is not the half of level {k}")


def reconstruct(bands, low, sizes=None):
    """Collapse a pyramid: expand the residual level by level and add bands."""
    bands = [as_image(b) for b in bands]
    low = as_image(low)
    if sizes is None:
        sizes = [_size(b) for b in bands] + [_size(low)]
    _check_ladder(bands, low, sizes)
    x = low
    for k in range(len(bands) - 1, -1, -1):
        w, h = sizes[k]
        x = upsample_to(x, w, h) + bands[k]
    return x


def reconstruct_adjoint(grad, sizes):
    """Gradients of :func:`reconstruct` w.r.t. each band and the residual."""
    grad = as_image(grad)
    grads = [None] * (len(sizes) - 1)
    g = grad
    for k in range(len(sizes) - 1):
        grads[k] = g
        w, h = sizes[k + 1]
        g = upsample_to_adjoint(g, w, h)
    return grads, g
