"""Learnable local Laplacian filtering of pyramid bands.

The remapping function bends intensities around a reference value ``g``:
differences up to ``sigma_r`` (details) are raised to the power ``alpha``,
larger ones (edges) are scaled by ``beta``.  A band is refined by remapping
its Gaussian level and taking one band-pass step; the fast variant samples
the reference at ``K`` levels in [0, 1] and interpolates per pixel.
"""
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._kernels_py import remap_arrays
from .errors import ContractError
from .imagecore import as_image, resize_bilinear, resize_bilinear_adjoint
from .predictor import ParamMaps, predict_params, predict_params_backward
from .pyramid import laplacian_step, laplacian_step_adjoint


@dataclass
class RemapConfig:
    sigma_r: float = 0.1
    k_samples: int = 16
    # detail branch on the raw coefficient (i <= sigma_r) instead of |i - g| <= sigma_r
    printed_branch: bool = False

    def __post_init__(self):
        if self.sigma_r <= 0:
            raise ContractError("sigma_r must be positive")
        if self.k_samples < 2:
            raise ContractError("k_samples must be at least 2")


def remap(i, g, alpha, beta, sigma_r=0.1, printed_branch=False):
    """Evaluate the remapping function (broadcasts over array arguments)."""
    r = remap_arrays(i, g, alpha, beta, sigma_r, printed_branch)
    return float(r) if np.ndim(r) == 0 else r


def remap_grad(i, g, alpha, beta, sigma_r=0.1, printed_branch=False):
    """Partial derivatives of :func:`remap` in alpha and beta (0 in alpha at i == g)."""
    _, da, db = remap_arrays(i, g, alpha, beta, sigma_r, printed_branch, with_grad=True)
    if np.ndim(da) == 0:
        return float(da), float(db)
    return da, db


def _check_level(level, band, params):
    level = as_image(level)
    if band is not None and as_image(band).shape != level.shape:
        raise ContractError("band and Gaussian level must have the same shape")
    shape = level.shape[:2]
    if np.shape(params.alpha) != shape or np.shape(params.beta) != shape:
        raise ContractError(
            f"parameter maps {np.shape(params.alpha)} do not match level {shape}")
    return level


def _sample_weights(level, k):
    """Bracketing sample index and interpolation fraction for every value."""
    t = np.clip(level, 0.0, 1.0) * (k - 1)
    q0 = np.clip(np.floor(t), 0, k - 2).astype(np.intp)
    return q0, t - q0


def _weight_for(q, q0, frac):
    return np.where(q0 == q, 1.0 - frac, 0.0) + np.where(q0 + 1 == q, frac, 0.0)


def refine_level_fast(level, band, params, cfg=None):
    """Fast local Laplacian refinement of one band.

    ``level`` is the Gaussian pyramid level the band was taken from; the
    returned image replaces the band.
    """
    cfg = cfg or RemapConfig()
    level = _check_level(level, band, params)
    k = cfg.k_samples
    alpha = np.ascontiguousarray(params.alpha, dtype=np.float64)
    beta = np.ascontiguousarray(params.beta, dtype=np.float64)
    q0, frac = _sample_weights(level, k)
    used = np.unique(np.concatenate([q0.ravel(), q0.ravel() + 1]))
    out = np.zeros(level.shape)
    for q in used:
        remapped = _backend.kernels.remap_level(level, q / (k - 1), alpha, beta,
                                                cfg.sigma_r, cfg.printed_branch)
        out += _weight_for(q, q0, frac) * laplacian_step(remapped)
    return out


def refine_level_fast_backward(level, params, cfg, grad_out):
    """Gradients of ``sum(grad_out * refine_level_fast(...))`` w.r.t. alpha and beta."""
    cfg = cfg or RemapConfig()
    level = _check_level(level, None, params)
    k = cfg.k_samples
    alpha = np.ascontiguousarray(params.alpha, dtype=np.float64)
    beta = np.ascontiguousarray(params.beta, dtype=np.float64)
    q0, frac = _sample_weights(level, k)
    used = np.unique(np.concatenate([q0.ravel(), q0.ravel() + 1]))
    grad_alpha = np.zeros(alpha.shape)
    grad_beta = np.zeros(beta.shape)
    for q in used:
        g_remap = laplacian_step_adjoint(_weight_for(q, q0, frac) * grad_out)
        _, da, db = _backend.kernels.remap_level(level, q / (k - 1), alpha, beta,
                                                 cfg.sigma_r, cfg.printed_branch, True)
        grad_alpha += (g_remap * da).sum(axis=2)
        grad_beta += (g_remap * db).sum(axis=2)
    return grad_alpha, grad_beta


def refine_level_direct(level, band, params, cfg=None):
    """Exact per-coefficient filter: remap the whole level around each pixel's
    own value and keep that pixel's band-pass coefficient.  O(pixels^2); for
    verification only."""
    cfg = cfg or RemapConfig()
    level = _check_level(level, band, params)
    h, w, _ = level.shape
    out = np.zeros(level.shape)
    for y in range(h):
        for x in range(w):
            remapped = remap_arrays(level, level[y, x], params.alpha[y, x], params.beta[y, x],
                                    cfg.sigma_r, cfg.printed_branch)
            out[y, x] = laplacian_step(remapped)[y, x]
    return out


# ----------------------------------------------------------------------------
# progressive refinement of the whole pyramid
# ----------------------------------------------------------------------------

def ppb_for_depth(ppbs, j):
    """PPB used ``j`` levels below the coarsest band, or None to leave it unrefined.

    Finer levels beyond the trained depth share the last PPB; the coarsest
    PPB (7-channel input) cannot be shared.
    """
    if j < len(ppbs):
        return ppbs[j]
    if len(ppbs) > 1:
        return ppbs[-1]
    return None


def _size(img):
    return img.shape[1], img.shape[0]


def ppb_inputs(band, guide, low=None, edge=None):
    """Channel concatenation fed to a PPB.

    Coarsest band: ``[band, up(low), up(edge)]``; others: ``[band, up(guide)]``
    where ``guide`` is the refined band one level coarser.
    """
    w, h = _size(band)
    if low is not None:
        edge_img = np.asarray(edge, dtype=np.float64)[:, :, None]
        return np.concatenate(
            [band, resize_bilinear(low, w, h), resize_bilinear(edge_img, w, h)], axis=2)
    return np.concatenate([band, resize_bilinear(guide, w, h)], axis=2)


@dataclass
class RefineCache:
    inputs: list
    params: list
    ppb_caches: list
    ppb_index: list


def refine_pyramid(pyr, gauss, ppbs, low, edge, cfg=None, refine=True, return_cache=False):
    """Refine every band from coarse to fine; returns ``[l^_0 .. l^_{N-1}]``.

    ``low`` is the (untouched) residual image, ``edge`` the edge map of the
    tone-mapped residual.  ``refine=False`` passes bands through unchanged.
    """
    cfg = cfg or RemapConfig()
    bands = pyr.bands
    n = len(bands)
    if len(gauss.levels) != n + 1:
        raise ContractError("Gaussian and Laplacian pyramids have different depths")
    for k in range(n):
        if gauss.levels[k].shape != bands[k].shape:
            raise ContractError(f"level {k}: Gaussian and band shapes differ")
    refined = [None] * n
    cache = RefineCache([None] * n, [None] * n, [None] * n, [None] * n)
    for k in range(n - 1, -1, -1):
        j = n - 1 - k
        ppb = ppb_for_depth(ppbs, j) if refine else None
        if ppb is None:
            refined[k] = bands[k]
            continue
        if k == n - 1:
            inp = ppb_inputs(bands[k], None, low=low, edge=edge)
        else:
            inp = ppb_inputs(bands[k], refined[k + 1])
        params, pc = predict_params(ppb, inp, level=k, return_cache=True)
        refined[k] = refine_level_fast(gauss.levels[k], bands[k], params, cfg)
        cache.inputs[k], cache.params[k], cache.ppb_caches[k] = inp, params, pc
        cache.ppb_index[k] = min(j, len(ppbs) - 1)
    return (refined, cache) if return_cache else refined


def refine_pyramid_backward(gauss, ppbs, cache, grad_refined, cfg=None):
    """Backpropagate band gradients to the PPB parameters.

    Returns a list (one entry per PPB) of ``(grad_kernels, grad_biases)`` or
    None for PPBs that were not used.
    """
    cfg = cfg or RemapConfig()
    n = len(grad_refined)
    grads = [None] * len(ppbs)
    g_bands = [np.array(g, dtype=np.float64) for g in grad_refined]
    for k in range(n):
        idx = cache.ppb_index[k]
        if idx is None:
            continue
        ppb = ppbs[idx]
        ga, gb = refine_level_fast_backward(gauss.levels[k], cache.params[k], cfg, g_bands[k])
        gks, gbs, ginp = predict_params_backward(ppb, cache.ppb_caches[k], ga, gb,
                                                 need_input_grad=k < n - 1)
        if grads[idx] is None:
            grads[idx] = (gks, gbs)
        else:
            grads[idx] = ([a + b for a, b in zip(grads[idx][0], gks)],
                          [a + b for a, b in zip(grads[idx][1], gbs)])
        if k < n - 1:
            w, h = _size(g_bands[k + 1])
            g_bands[k + 1] += resize_bilinear_adjoint(ginp[:, :, 3:6], w, h)
    return grads


def constant_params(shape, alpha, beta, level=0):
    """Spatially constant parameter maps."""
    return ParamMaps(np.full(shape, float(alpha)), np.full(shape, float(beta)), level)
