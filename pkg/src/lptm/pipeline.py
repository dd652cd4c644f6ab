"""Full tone-mapping pass and its reverse-mode gradient.

decompose -> predict weights on the residual -> fuse basis LUTs ->
Canny edges of the tone-mapped residual -> refine bands -> reconstruct.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .imagecore import as_image, canny_edges, to_gray
from .llf import RemapConfig, refine_pyramid, refine_pyramid_backward
from .lut import fuse_apply, fuse_backward
from .predictor import net_backward, predict_weights
from .pyramid import decompose, reconstruct, reconstruct_adjoint


@dataclass
class PipelineConfig:
    target_low: int = 64
    k_samples: int = 16
    sigma_r: float = 0.1
    printed_branch: bool = False
    refine: bool = True
    canny_low: float = 0.1
    canny_high: float = 0.2

    def remap_config(self):
        return RemapConfig(self.sigma_r, self.k_samples, self.printed_branch)


@dataclass
class Forward:
    output: np.ndarray
    low_out: np.ndarray
    pyr: object
    gauss: object
    weights: np.ndarray
    weight_cache: object
    lut_parts: list
    edge: np.ndarray
    refined: list
    refine_cache: object
    timings: dict = field(default_factory=dict)


def edge_map(low_out, cfg):
    return canny_edges(to_gray(np.clip(low_out, 0.0, 1.0)), cfg.canny_low, cfg.canny_high)


def forward(state, img, cfg=None, n_levels=None, edge_override=None):
    """Run the model on one image.  ``edge_override`` freezes the edge map."""
    cfg = cfg or PipelineConfig()
    img = as_image(img)
    if img.shape[2] != 3:
        raise ValueError("the pipeline needs a 3-channel image")
    t = {}
    t0 = time.perf_counter()
    pyr, gauss = decompose(img, cfg.target_low, n_levels)
    t["decompose"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    weights, wcache = predict_weights(state.weight_net, pyr.low, return_cache=True)
    t["predict_weights"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    low_out, parts = fuse_apply(state.luts, weights, pyr.low, return_parts=True)
    t["fuse_luts"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    edge = edge_map(low_out, cfg) if edge_override is None else edge_override
    t["canny"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    refined, rcache = refine_pyramid(pyr, gauss, state.ppbs, pyr.low, edge,
                                     cfg.remap_config(), cfg.refine, return_cache=True)
    t["refine"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out = reconstruct(refined, low_out, pyr.sizes)
    t["reconstruct"] = time.perf_counter() - t0
    return Forward(out, low_out, pyr, gauss, weights, wcache, parts, edge, refined, rcache, t)


def tonemap(state, img, cfg=None):
    """Inference: model output clamped to [0, 1]."""
    return np.clip(forward(state, img, cfg).output, 0.0, 1.0)


def backward(state, fwd, grad_out, grad_low_out, cfg=None):
    """Gradients of a scalar loss given its gradients w.r.t. the output and the
    tone-mapped residual.  Returns name -> array matching
    ``state.named_parameters()`` (zero arrays for unused parameters)."""
    cfg = cfg or PipelineConfig()
    grad_bands, grad_low = reconstruct_adjoint(grad_out, fwd.pyr.sizes)
    grad_low = grad_low + grad_low_out

    ppb_grads = refine_pyramid_backward(fwd.gauss, state.ppbs, fwd.refine_cache, grad_bands,
                                        cfg.remap_config())
    lut_grads, grad_weights = fuse_backward(state.luts, fwd.weights, fwd.pyr.low, grad_low,
                                            fwd.lut_parts)
    wk, wb, _ = net_backward(state.weight_net, fwd.weight_cache, grad_weights,
                             need_input_grad=False)

    grads = {}
    for n, g in enumerate(lut_grads):
        grads[f"lut.{n}"] = g
    for li, (k, b) in enumerate(zip(wk, wb)):
        grads[f"weight_net.{li}.kernel"] = k
        grads[f"weight_net.{li}.bias"] = b
    for j, ppb in enumerate(state.ppbs):
        g = ppb_grads[j]
        for li in range(len(ppb.kernels)):
            grads[f"ppb.{j}.{li}.kernel"] = (g[0][li] if g is not None
                                            else np.zeros(ppb.kernels[li].shape))
            grads[f"ppb.{j}.{li}.bias"] = (g[1][li] if g is not None
                                          else np.zeros(ppb.biases[li].shape))
    return grads
