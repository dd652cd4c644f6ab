"""Pure numpy implementations of the per-pixel kernels.

Same contract as the compiled ``_ckernels`` module; selected by
:mod:`lptm._backend` when the extension is unavailable or disabled.
"""
import numpy as np

NAME = "numpy"

_CORNERS = [(dr, dg, db) for db in (0, 1) for dg in (0, 1) for dr in (0, 1)]


def _cells(table, img):
    nb = table.shape[0]
    s = np.clip(img, 0.0, 1.0) * (nb - 1)
    cell = np.clip(np.floor(s), 0, nb - 2).astype(np.intp)
    return cell, s - cell


def trilinear_forward(table, img):
    """Apply lattice ``table[b, g, r, c]`` to an (H, W, 3) image."""
    cell, frac = _cells(table, img)
    i, j, k = cell[..., 0], cell[..., 1], cell[..., 2]
    fr, fg, fb = frac[..., 0:1], frac[..., 1:2], frac[..., 2:3]
    out = np.zeros(img.shape, dtype=np.float64)
    for dr, dg, db in _CORNERS:
        w = ((fr if dr else 1.0 - fr) * (fg if dg else 1.0 - fg) * (fb if db else 1.0 - fb))
        out += w * table[k + db, j + dg, i + dr]
    return out


def trilinear_backward(table, img, grad_out):
    """Return (grad_table, grad_img) for :func:`trilinear_forward`."""
    nb = table.shape[0]
    cell, frac = _cells(table, img)
    i, j, k = cell[..., 0], cell[..., 1], cell[..., 2]
    fr, fg, fb = frac[..., 0:1], frac[..., 1:2], frac[..., 2:3]
    grad_table = np.zeros(table.size, dtype=np.float64)
    grad_img = np.zeros(img.shape, dtype=np.float64)
    chan = np.arange(3)
    for dr, dg, db in _CORNERS:
        wr = fr if dr else 1.0 - fr
        wg = fg if dg else 1.0 - fg
        wb = fb if db else 1.0 - fb
        node = table[k + db, j + dg, i + dr]
        flat = (((k + db) * nb + (j + dg)) * nb + (i + dr))[..., None] * 3 + chan
        grad_table += np.bincount(flat.ravel(), weights=(wr * wg * wb * grad_out).ravel(),
                                  minlength=table.size)
        dot = (node * grad_out).sum(axis=-1, keepdims=True)
        grad_img[..., 0:1] += (1.0 if dr else -1.0) * wg * wb * dot
        grad_img[..., 1:2] += (1.0 if dg else -1.0) * wr * wb * dot
        grad_img[..., 2:3] += (1.0 if db else -1.0) * wr * wg * dot
    grad_img *= nb - 1
    grad_img[(img < 0.0) | (img > 1.0)] = 0.0
    return grad_table.reshape(table.shape), grad_img


def remap_arrays(i, g, alpha, beta, sigma_r, printed_branch=False, with_grad=False):
    """Broadcasting remapping function; optionally its partials in alpha and beta."""
    i = np.asarray(i, dtype=np.float64)
    d = i - g
    a = np.abs(d)
    s = np.sign(d)
    detail = (i <= sigma_r) if printed_branch else (a <= sigma_r)
    ratio = a / sigma_r
    powed = ratio ** alpha
    r = np.where(detail, g + s * sigma_r * powed, g + s * (beta * (a - sigma_r) + sigma_r))
    if not with_grad:
        return r
    logr = np.log(np.where(a > 0.0, ratio, 1.0))
    d_alpha = np.where(detail, s * sigma_r * powed * logr, 0.0)
    d_beta = np.where(detail, 0.0, s * (a - sigma_r))
    return r, d_alpha, d_beta


def remap_level(img, g, alpha, beta, sigma_r, printed_branch=False, with_grad=False):
    """Remap an (H, W, C) level around scalar reference ``g`` with (H, W) parameter maps."""
    return remap_arrays(img, g, alpha[..., None], beta[..., None], sigma_r,
                        printed_branch, with_grad)
