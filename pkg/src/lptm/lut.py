"""3D look-up tables: trilinear application, per-pixel basis fusion,
lattice regularizers and Adobe ``.cube`` I/O.

A lattice is stored as ``table[b, g, r, c]`` (shape ``(Nb, Nb, Nb, 3)``), so
the C-order flattening has the red index varying fastest, matching the row
order of ``.cube`` files.  Node ``(i, j, k)`` in (r, g, b) coordinates is
``table[k, j, i]``.
"""
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ContractError, FormatError
from .imagecore import as_image


@dataclass
class Lut3d:
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table)
        nb = t.shape[0]
        if t.shape != (nb, nb, nb, 3) or nb < 2:
            raise ContractError(f"lattice must have shape (Nb, Nb, Nb, 3), got {t.shape}")
        self.table = t

    @property
    def n_bins(self):
        return self.table.shape[0]

    def node(self, i, j, k):
        """Output colour stored at red index i, green j, blue k."""
        return self.table[k, j, i]


def identity_lut(n_bins=33):
    if n_bins < 2:
        raise ContractError(f"n_bins must be >= 2, got {n_bins}")
    ramp = np.arange(n_bins) / (n_bins - 1)
    b, g, r = np.meshgrid(ramp, ramp, ramp, indexing="ij")
    return Lut3d(np.stack([r, g, b], axis=-1))


def zero_lut(n_bins=33):
    if n_bins < 2:
        raise ContractError(f"n_bins must be >= 2, got {n_bins}")
    return Lut3d(np.zeros((n_bins, n_bins, n_bins, 3)))


def _table(lut):
    t = lut.table if isinstance(lut, Lut3d) else lut
    return np.ascontiguousarray(t, dtype=np.float64)


def _rgb(img):
    img = as_image(img)
    if img.shape[2] != 3:
        raise ContractError("LUT application needs a 3-channel image")
    return img


def trilinear_apply(lut, img):
    """Map every pixel through the lattice with trilinear interpolation.

    Inputs are clamped to [0, 1]; the cell index is capped at ``Nb - 2`` so
    a value of exactly 1.0 interpolates inside the last cell.
    """
    return _backend.kernels.trilinear_forward(_table(lut), _rgb(img))


def trilinear_backward(lut, img, grad_out):
    """Gradients of ``sum(grad_out * trilinear_apply(lut, img))``.

    Returns ``(grad_table, grad_img)``; ``grad_img`` is zero where the input
    was clamped.
    """
    img = _rgb(img)
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    if grad_out.shape != img.shape:
        raise ContractError("grad_out must match the image shape")
    return _backend.kernels.trilinear_backward(_table(lut), img, grad_out)


def _check_fusion(luts, weights, img):
    img = _rgb(img)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3 or weights.shape[:2] != img.shape[:2]:
        raise ContractError(
            f"weight maps {weights.shape} do not match image {img.shape[:2]}")
    if weights.shape[2] != len(luts):
        raise ContractError(f"{weights.shape[2]} weight maps for {len(luts)} LUTs")
    return img, weights


def fuse_apply(luts, weights, img, return_parts=False):
    """Interpolate with every basis LUT, then blend with per-pixel weights.

    ``weights`` has shape ``(H, W, N)``.  With ``return_parts`` the per-LUT
    outputs are returned as well (needed for the backward pass).
    """
    img, weights = _check_fusion(luts, weights, img)
    parts = [trilinear_apply(lut, img) for lut in luts]
    out = np.zeros(img.shape)
    for n, part in enumerate(parts):
        out += weights[:, :, n:n + 1] * part
    return (out, parts) if return_parts else out


def fuse_backward(luts, weights, img, grad_out, parts=None):
    """Return ``(grad_tables, grad_weights)`` for :func:`fuse_apply`."""
    img, weights = _check_fusion(luts, weights, img)
    if parts is None:
        parts = [trilinear_apply(lut, img) for lut in luts]
    grad_weights = np.stack([(grad_out * p).sum(axis=2) for p in parts], axis=2)
    grad_tables = [trilinear_backward(lut, img, weights[:, :, n:n + 1] * grad_out)[0]
                   for n, lut in enumerate(luts)]
    return grad_tables, grad_weights


# ----------------------------------------------------------------------------
# regularizers
# ----------------------------------------------------------------------------

def smoothness_reg(lut, with_grad=False):
    """Sum of squared differences between lattice neighbours along r, g and b."""
    t = _table(lut)
    total = 0.0
    grad = np.zeros_like(t) if with_grad else None
    for axis in range(3):
        d = np.diff(t, axis=axis)
        total += float(np.sum(d * d))
        if with_grad:
            hi = [slice(None)] * 4
            lo = [slice(None)] * 4
            hi[axis] = slice(1, None)
            lo[axis] = slice(None, -1)
            grad[tuple(hi)] += 2.0 * d
            grad[tuple(lo)] -= 2.0 * d
    return (total, grad) if with_grad else total


def monotonicity_reg(lut, with_grad=False):
    """Squared hinge on every decreasing neighbour pair, all channels and axes."""
    t = _table(lut)
    total = 0.0
    grad = np.zeros_like(t) if with_grad else None
    for axis in range(3):
        h = np.maximum(0.0, -np.diff(t, axis=axis))
        total += float(np.sum(h * h))
        if with_grad:
            hi = [slice(None)] * 4
            lo = [slice(None)] * 4
            hi[axis] = slice(1, None)
            lo[axis] = slice(None, -1)
            grad[tuple(lo)] += 2.0 * h
            grad[tuple(hi)] -= 2.0 * h
    return (total, grad) if with_grad else total


# ----------------------------------------------------------------------------
# .cube files
# ----------------------------------------------------------------------------

def write_cube(lut, path, title=None):
    t = _table(lut)
    nb = t.shape[0]
    with open(path, "w") as fh:
        if title:
            fh.write(f'TITLE "{title}"\n')
        fh.write(f"LUT_3D_SIZE {nb}\n")
        for r, g, b in t.reshape(-1, 3):
            fh.write(f"{r:.6f} {g:.6f} {b:.6f}\n")


def read_cube(path):
    size = None
    rows = []
    with open(path) as fh:
        lines = fh.readlines()
    last = 0
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0].upper()
        if head == "TITLE":
            continue
        if head == "LUT_3D_SIZE":
            try:
                size = int(line.split()[1])
            except (IndexError, ValueError):
                raise FormatError("malformed LUT_3D_SIZE", lineno) from None
            if size < 2:
                raise FormatError(f"LUT_3D_SIZE must be >= 2, got {size}", lineno)
            continue
        if head in ("DOMAIN_MIN", "DOMAIN_MAX"):
            want = 0.0 if head == "DOMAIN_MIN" else 1.0
            vals = [float(v) for v in line.split()[1:]]
            if vals != [want] * 3:
                raise FormatError(f"only the default {head} is supported", lineno)
            continue
        if head == "LUT_1D_SIZE":
            raise FormatError("1D LUTs are not supported", lineno)
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise FormatError(f"unrecognized line {line!r}", lineno) from None
        if len(vals) != 3:
            raise FormatError(f"expected 3 values per row, got {len(vals)}", lineno)
        if size is None:
            raise FormatError("data row before LUT_3D_SIZE", lineno)
        rows.append(vals)
        last = lineno
    if size is None:
        raise FormatError("missing LUT_3D_SIZE", len(lines))
    if len(rows) != size ** 3:
        raise FormatError(
            f"expected {size ** 3} data rows (N_b^3 with N_b={size}), found {len(rows)}",
            last or len(lines))
    return Lut3d(np.asarray(rows, dtype=np.float64).reshape(size, size, size, 3))


def cube_io(lut, path, direction):
    if direction == "write":
        write_cube(lut, path)
        return None
    if direction == "read":
        return read_cube(path)
    raise ContractError(f"direction must be 'read' or 'write', got {direction!r}")
