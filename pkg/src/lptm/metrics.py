"""Image quality metrics: PSNR, SSIM and CIELAB delta E."""
import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ContractError
from .imagecore import as_image, rgb_to_lab

PSNR_CAP = 99.0


def _pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """PSNR in dB for data range 1; identical images give ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a, b, win_size=7, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over channels with a uniform window and sample covariances.

    Follows the conventions of ``skimage.metrics.structural_similarity``
    defaults: reflected borders, and the border of width ``win_size // 2``
    excluded from the mean.
    """
    a, b = _pair(a, b)
    h, w, _ = a.shape
    if min(h, w) < win_size:
        raise ContractError(f"image {w}x{h} smaller than the {win_size}x{win_size} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    npx = win_size ** 2
    cov_norm = npx / (npx - 1.0)
    pad = (win_size - 1) // 2
    scores = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]

        def filt(z):
            return uniform_filter(z, size=win_size, mode="reflect")

        ux, uy = filt(x), filt(y)
        vx = cov_norm * (filt(x * x) - ux * ux)
        vy = cov_norm * (filt(y * y) - uy * uy)
        vxy = cov_norm * (filt(x * y) - ux * uy)
        num = (2 * ux * uy + c1) * (2 * vxy + c2)
        den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
        s = num / den
        scores.append(s[pad:h - pad, pad:w - pad].mean())
    return float(np.mean(scores))


def delta_e(a, b):
    """Mean Euclidean distance between the CIELAB images."""
    a, b = _pair(a, b)
    return float(np.mean(np.linalg.norm(rgb_to_lab(a) - rgb_to_lab(b), axis=2)))
