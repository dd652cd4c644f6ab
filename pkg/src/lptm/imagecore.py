"""Image container conventions, codecs, colour conversion and edge detection.

Images are plain numpy arrays of shape ``(height, width, channels)``
(interleaved, row-major) holding float64 values, with ``channels`` equal to
1 or 3.  Edge maps are ``(height, width)`` uint8 arrays with values in {0, 1}.

Supported files: PNG (8/16-bit, via pypng), binary PPM/PGM (maxval up to
65535, big-endian samples when 16-bit) and PFM (endianness from the sign of
the scale field).
"""
import os
import re

import numpy as np
import png
from scipy import ndimage

from . import _linops
from .errors import ContractError, FormatError, TruncatedFileError

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

# sRGB primaries to CIE XYZ, D65 reference white
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE = _RGB_TO_XYZ.sum(axis=1)


def as_image(arr):
    """Coerce an array to the canonical ``(H, W, C)`` float64 layout."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ContractError(f"expected (H, W, 1|3) image, got shape {a.shape}")
    return a


# ----------------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------------

def _ext(path):
    return os.path.splitext(str(path))[1].lower()


def load_image(path, clamp=True):
    """Read an image file and return values normalized to [0, 1].

    Integer formats are divided by their full-scale value.  PFM data is
    passed through and, when ``clamp`` is true, clipped to [0, 1].
    """
    ext = _ext(path)
    if ext == ".png":
        img = _read_png(path)
    elif ext in (".ppm", ".pgm", ".pnm"):
        img = _read_pnm(path)
    elif ext == ".pfm":
        img = read_pfm(path)
    else:
        raise FormatError(f"unsupported image format {ext!r} ({path})")
    if img.shape[2] not in (1, 3):
        raise FormatError(f"unsupported channel count {img.shape[2]} in {path}")
    if not np.all(np.isfinite(img)):
        raise FormatError(f"non-finite samples in {path}")
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    return img


def quantize(img, bitdepth):
    """Clamp to [0, 1] and round half up to integer codes."""
    if bitdepth not in (8, 16):
        raise ContractError(f"bitdepth must be 8 or 16, got {bitdepth}")
    full = (1 << bitdepth) - 1
    codes = np.floor(np.clip(img, 0.0, 1.0) * full + 0.5)
    return codes.astype(np.uint16 if bitdepth == 16 else np.uint8)


def save_image(img, path, bitdepth=8):
    """Write an image; integer formats are quantized with :func:`quantize`."""
    img = as_image(img)
    ext = _ext(path)
    if ext == ".pfm":
        write_pfm(path, img)
        return
    codes = quantize(img, bitdepth)
    if ext == ".png":
        h, w, c = codes.shape
        writer = png.Writer(w, h, greyscale=(c == 1), bitdepth=bitdepth)
        with open(path, "wb") as fh:
            writer.write(fh, codes.reshape(h, w * c))
    elif ext in (".ppm", ".pgm", ".pnm"):
        h, w, c = codes.shape
        magic = b"P6" if c == 3 else b"P5"
        full = (1 << bitdepth) - 1
        data = codes.astype(">u2" if bitdepth == 16 else "u1").tobytes()
        with open(path, "wb") as fh:
            fh.write(b"%s\n%d %d\n%d\n" % (magic, w, h, full))
            fh.write(data)
    else:
        raise FormatError(f"unsupported image format {ext!r} ({path})")


def _read_png(path):
    try:
        w, h, rows, info = png.Reader(filename=str(path)).asDirect()
        data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    except (png.ChunkError, EOFError) as exc:
        raise TruncatedFileError(f"{path}: {exc}") from exc
    except png.FormatError as exc:
        if "EOF" in str(exc) or "truncat" in str(exc).lower():
            raise TruncatedFileError(f"{path}: {exc}") from exc
        raise FormatError(f"{path}: {exc}") from exc
    planes = info["planes"]
    if data.shape != (h, w * planes):
        raise TruncatedFileError(f"{path}: expected {h} rows of {w * planes} samples")
    data = data.reshape(h, w, planes)
    if info.get("alpha"):
        data = data[:, :, :-1]
    return data / float((1 << info["bitdepth"]) - 1)


def _pnm_tokens(buf, count):
    """Parse ``count`` whitespace-separated header fields, skipping comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)").match(buf, pos)
        if m is None:
            raise FormatError("malformed PNM header")
        tokens.append(m.group(2))
        pos = m.end()
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def _read_pnm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), start = _pnm_tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: only binary P5/P6 supported, got {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid maxval {maxval}")
    c = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * c
    raw = buf[start:start + n * dtype.itemsize]
    if len(raw) < n * dtype.itemsize:
        raise TruncatedFileError(f"{path}: expected {n} samples")
    return np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(h, w, c) / maxval


def read_pfm(path):
    """Read a PFM file verbatim (no clamping), top row first."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, scale), start = _pnm_tokens(buf, 4)
    if magic == b"PF":
        c = 3
    elif magic == b"Pf":
        c = 1
    else:
        raise FormatError(f"{path}: not a PFM file")
    w, h, scale = int(w), int(h), float(scale)
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    n = w * h * c
    raw = buf[start:start + 4 * n]
    if len(raw) < 4 * n:
        raise TruncatedFileError(f"{path}: expected {n} float samples")
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(h, w, c)
    return np.ascontiguousarray(data[::-1])


def write_pfm(path, img):
    img = as_image(img)
    h, w, c = img.shape
    magic = b"PF" if c == 3 else b"Pf"
    with open(path, "wb") as fh:
        fh.write(b"%s\n%d %d\n-1.0\n" % (magic, w, h))
        fh.write(img[::-1].astype("<f4").tobytes())


# ----------------------------------------------------------------------------
# pixel operations
# ----------------------------------------------------------------------------

def to_gray(img):
    """Rec.601 luma; single-channel inputs are returned unchanged."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ GRAY_WEIGHTS)[:, :, None]


def resize_bilinear(img, w, h):
    """Bilinear resize with half-pixel centres and edge clamping."""
    if w < 1 or h < 1:
        raise ContractError(f"target size must be positive, got {w}x{h}")
    img = as_image(img)
    return _linops.apply_separable(
        img, _linops.bilinear_matrix(img.shape[0], h), _linops.bilinear_matrix(img.shape[1], w))


def resize_bilinear_adjoint(grad, in_w, in_h):
    """Transpose of :func:`resize_bilinear` from ``(in_h, in_w)`` to ``grad``'s size."""
    grad = as_image(grad)
    return _linops.apply_separable(
        grad,
        _linops.bilinear_matrix(in_h, grad.shape[0]).T.tocsr(),
        _linops.bilinear_matrix(in_w, grad.shape[1]).T.tocsr())


def _srgb_to_linear(v):
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(img):
    """sRGB in [0, 1] to CIELAB (D65)."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ContractError("rgb_to_lab needs a 3-channel image")
    xyz = _srgb_to_linear(np.clip(img, 0.0, 1.0)) @ _RGB_TO_XYZ.T / _WHITE
    delta = 6.0 / 29.0
    f = np.where(xyz > delta ** 3, np.cbrt(xyz), xyz / (3 * delta ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


# ----------------------------------------------------------------------------
# Canny
# ----------------------------------------------------------------------------

def _gaussian_taps(sigma, size=5):
    x = np.arange(size) - size // 2
    k = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return k / k.sum()


def canny_edges(gray, low_ratio=0.1, high_ratio=0.2, sigma=1.0):
    """Binary Canny edge map of a single-channel image.

    Thresholds are fractions of the maximum gradient magnitude.  Gradient
    magnitudes are rounded to 1e-9 before non-maximum suppression so that
    ties (e.g. a symmetric step) are broken the same way for an image and
    its intensity inverse.
    """
    gray = as_image(gray)
    if gray.shape[2] != 1:
        raise ContractError("canny_edges needs a single-channel image")
    if not 0.0 < low_ratio < high_ratio <= 1.0:
        raise ContractError("need 0 < low_ratio < high_ratio <= 1")
    g = gray[:, :, 0]
    taps = _gaussian_taps(sigma)
    g = ndimage.correlate1d(g, taps, axis=0, mode="nearest")
    g = ndimage.correlate1d(g, taps, axis=1, mode="nearest")
    gx = ndimage.sobel(g, axis=1, mode="nearest")
    gy = ndimage.sobel(g, axis=0, mode="nearest")
    mag = np.round(np.hypot(gx, gy), 9)
    top = mag.max()
    if top <= 0.0:
        return np.zeros(g.shape, dtype=np.uint8)

    # quantize gradient direction to 0/45/90/135 degrees
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(np.int64)) % 4
    offsets = [(0, 1), (1, 1), (1, 0), (1, -1)]  # (dy, dx) along the gradient
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (dy, dx) in enumerate(offsets):
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (sector == s) & (mag >= bwd) & (mag > fwd)
    thin = np.where(keep, mag, 0.0)

    strong = thin >= high_ratio * top
    weak = thin >= low_ratio * top
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(g.shape, dtype=np.uint8)
    connected = np.zeros(n + 1, dtype=bool)
    connected[np.unique(labels[strong])] = True
    connected[0] = False
    return connected[labels].astype(np.uint8)
