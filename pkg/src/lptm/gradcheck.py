"""Central finite-difference checks of the analytic gradients.

The edge map feeding the coarsest PPB is piecewise constant in the
parameters (its derivative is zero almost everywhere), so finite
differences are taken with the edge map frozen at the unperturbed point.

A central difference with step 1e-3 is only a valid oracle where the loss
is smooth over the whole stencil.  The test instance is therefore placed
away from the nonsmooth sets: every hidden channel's pre-activations are
shifted to one side of the rectifier kink (alternating sides across
channels, so both slopes are exercised), and the reference differs from
the output by at least ``RESIDUAL_MARGIN`` everywhere.
"""
from dataclasses import dataclass

import numpy as np

from . import pipeline
from .imagecore import as_image
from .predictor import LEAK, conv2d, init_state
from .trainer import TrainConfig, evaluate_loss, loss_and_grads


KINK_MARGIN = 0.05
RESIDUAL_MARGIN = 0.05


@dataclass
class GroupCheck:
    name: str
    rel_error: float
    n_coords: int
    analytic_norm: float


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def separate_kinks(net, x, margin=KINK_MARGIN):
    """Set hidden biases so no pre-activation lies within ``margin`` of zero."""
    x = np.asarray(x, dtype=np.float64)
    for li in range(len(net.kernels) - 1):
        z = conv2d(x, net.kernels[li], np.zeros(net.kernels[li].shape[3]), net.dilations[li])
        lo, hi = z.min(axis=(0, 1)), z.max(axis=(0, 1))
        positive = np.arange(z.shape[2]) % 2 == 0
        net.biases[li][...] = np.where(positive, margin - lo, -margin - hi)
        z = z + net.biases[li]
        x = np.where(z > 0.0, z, LEAK * z)


def _calibrate(state, img, cfg):
    pcfg = cfg.pipeline_config()
    fwd = pipeline.forward(state, img, pcfg)
    separate_kinks(state.weight_net, fwd.pyr.low)
    # PPB inputs depend on coarser PPBs, so calibrate coarse to fine
    for j in range(len(state.ppbs)):
        fwd = pipeline.forward(state, img, pcfg)
        k = fwd.pyr.n_levels - 1 - j
        separate_kinks(state.ppbs[j], fwd.refine_cache.inputs[k])
    return pipeline.forward(state, img, pcfg)


def tiny_instance(seed=0, size=16, n_levels=2, n_bins=5):
    """A small randomized model/data pair where every parameter path is active.

    The default near-identity init zeroes some paths (zero LUTs, tiny final
    kernels), so parameters are perturbed to generic values first.
    """
    rng = np.random.default_rng(seed)
    state = init_state(n_levels=n_levels, n_luts=3, n_bins=n_bins, seed=seed, dtype=np.float64)
    for n, t in enumerate(state.luts):
        t += rng.normal(0.0, 0.05, t.shape)
        if n > 0:
            t += 0.3 * state.luts[0]
    for net in [state.weight_net] + state.ppbs:
        net.kernels[-1][...] = rng.normal(0.0, 0.1, net.kernels[-1].shape)
        for b in net.biases:
            b += rng.normal(0.0, 0.05, b.shape)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.stack([0.2 + 0.6 * xx, 0.3 + 0.4 * yy, 0.5 + 0.3 * np.sin(6 * xx * yy)], axis=2)
    img = np.clip(img + rng.uniform(-0.1, 0.1, img.shape), 0.0, 1.0)
    cfg = TrainConfig(target_low=size // (2 ** n_levels), n_bins=n_bins, augment_flips=False)
    out = as_image(_calibrate(state, img, cfg).output)
    # move away from the output, towards the middle of [0, 1]
    step = rng.uniform(RESIDUAL_MARGIN, 0.3, out.shape)
    ref = np.where(out > 0.5, out - step, out + step)
    return state, img, ref, cfg


def check_gradients(state, img, ref, cfg, eps=1e-3, max_coords=24, seed=0):
    """Compare analytic and central-difference gradients for every parameter tensor."""
    rng = np.random.default_rng(seed)
    edge = pipeline.forward(state, img, cfg.pipeline_config()).edge
    _, grads, _ = loss_and_grads(state, img, ref, cfg, edge_override=edge)
    results = []
    for name, p in state.named_parameters().items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            # half the budget on the largest analytic entries, half uniform
            top = np.argsort(-np.abs(g), kind="stable")[:max_coords // 2]
            rest = rng.choice(flat.size, size=max_coords - len(top), replace=False)
            coords = np.unique(np.concatenate([top, rest]))
        numeric = np.empty(len(coords))
        for i, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + eps
            fp = evaluate_loss(state, img, ref, cfg, edge_override=edge)
            flat[c] = old - eps
            fm = evaluate_loss(state, img, ref, cfg, edge_override=edge)
            flat[c] = old
            numeric[i] = (fp - fm) / (2 * eps)
        results.append(GroupCheck(name, relative_error(g[coords], numeric), len(coords),
                                  float(np.linalg.norm(g))))
    return results


def run_tiny_check(seed=0, eps=1e-3, max_coords=24):
    state, img, ref, cfg = tiny_instance(seed)
    return check_gradients(state, img, ref, cfg, eps, max_coords, seed)
