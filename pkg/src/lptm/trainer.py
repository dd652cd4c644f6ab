"""Losses, Adam optimization, paired datasets, training and evaluation."""
import csv
import logging
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import pipeline
from .errors import ContractError, FormatError, LptmError
from .imagecore import as_image, load_image
from .lut import monotonicity_reg, smoothness_reg
from .metrics import delta_e, psnr, ssim
from .predictor import init_state
from .pyramid import decompose, level_count

logger = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".ppm", ".pgm", ".pfm")
LOG_HEADER = "step,epoch,l1,ls,lm,total"


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch: int = 1
    epochs: int = 200
    lambda_s: float = 1e-4
    lambda_m: float = 10.0
    lambda_p: float = 0.0
    seed: int = 0
    augment_flips: bool = True
    target_low: int = 64
    k_samples: int = 16
    n_luts: int = 3
    n_bins: int = 33
    clip_norm: float = 10.0
    max_steps: int = 0  # 0 = no limit
    refine: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        if min(self.lambda_s, self.lambda_m, self.lambda_p) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.batch != 1:
            raise ContractError("only batch size 1 is supported")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")

    def pipeline_config(self):
        return pipeline.PipelineConfig(target_low=self.target_low, k_samples=self.k_samples,
                                       refine=self.refine)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def _same(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def l1_loss(out, ref, out_low, ref_low):
    """Mean absolute error at full resolution plus on the residual images."""
    out, ref, out_low, ref_low = map(as_image, (out, ref, out_low, ref_low))
    _same(out, ref, "l1 full")
    _same(out_low, ref_low, "l1 low")
    return float(np.mean(np.abs(out - ref)) + np.mean(np.abs(out_low - ref_low)))


def l1_loss_grad(out, ref, out_low, ref_low):
    return np.sign(out - ref) / out.size, np.sign(out_low - ref_low) / out_low.size


def lut_regularizers(luts, with_grad=False):
    """Summed smoothness and monotonicity over every basis lattice."""
    ls = lm = 0.0
    gs, gm = [], []
    for t in luts:
        s = smoothness_reg(t, with_grad)
        m = monotonicity_reg(t, with_grad)
        if with_grad:
            ls += s[0]
            lm += m[0]
            gs.append(s[1])
            gm.append(m[1])
        else:
            ls += s
            lm += m
    return (ls, lm, gs, gm) if with_grad else (ls, lm)


def total_loss(l1, ls, lm, lp=0.0, lambda_s=1e-4, lambda_m=10.0, lambda_p=0.0):
    """Weighted objective from its components."""
    return l1 + lambda_s * ls + lambda_m * lm + lambda_p * lp


def loss_and_grads(state, img, ref, cfg, perceptual=None, edge_override=None):
    """One forward/backward pass; returns ``(parts, grads, forward)``."""
    pcfg = cfg.pipeline_config()
    fwd = pipeline.forward(state, img, pcfg, edge_override=edge_override)
    ref_low = decompose(ref, n_levels=fwd.pyr.n_levels)[0].low
    l1 = l1_loss(fwd.output, ref, fwd.low_out, ref_low)
    g_out, g_low = l1_loss_grad(fwd.output, as_image(ref), fwd.low_out, ref_low)
    lp = 0.0
    if cfg.lambda_p > 0:
        if perceptual is None:
            raise ContractError("lambda_p > 0 needs a perceptual loss hook")
        lp, g_p = perceptual(fwd.output, ref)
        g_out = g_out + cfg.lambda_p * g_p
    grads = pipeline.backward(state, fwd, g_out, g_low, pcfg)
    ls, lm, gs, gm = lut_regularizers(state.luts, with_grad=True)
    for n in range(state.n_luts):
        grads[f"lut.{n}"] = grads[f"lut.{n}"] + cfg.lambda_s * gs[n] + cfg.lambda_m * gm[n]
    parts = {"l1": l1, "ls": ls, "lm": lm, "lp": lp,
             "total": total_loss(l1, ls, lm, lp, cfg.lambda_s, cfg.lambda_m, cfg.lambda_p)}
    return parts, grads, fwd


def evaluate_loss(state, img, ref, cfg, edge_override=None):
    """Total objective without gradients (used by finite differences)."""
    pcfg = cfg.pipeline_config()
    fwd = pipeline.forward(state, img, pcfg, edge_override=edge_override)
    ref_low = decompose(ref, n_levels=fwd.pyr.n_levels)[0].low
    l1 = l1_loss(fwd.output, ref, fwd.low_out, ref_low)
    ls, lm = lut_regularizers(state.luts)
    return total_loss(l1, ls, lm, 0.0, cfg.lambda_s, cfg.lambda_m, 0.0)


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                             for g in grads.values())))


def adam_step(state, grads, t, cfg):
    """Bias-corrected Adam update in place; returns the state.

    Moments are kept in the parameters' dtype.  A step with any non-finite
    gradient is skipped.
    """
    if t < 1:
        raise ContractError("Adam step index starts at 1")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        logger.warning("step %d: non-finite gradient, update skipped", t)
        return state
    params = state.named_parameters()
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.adam_m.get(name)
        v = state.adam_v.get(name)
        m = np.zeros(p.shape) if m is None else m.astype(np.float64)
        v = np.zeros(p.shape) if v is None else v.astype(np.float64)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        update = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        p[...] = (p.astype(np.float64) - update).astype(p.dtype)
        state.adam_m[name] = m.astype(p.dtype)
        state.adam_v[name] = v.astype(p.dtype)
    state.step = t
    return state


# ----------------------------------------------------------------------------
# data
# ----------------------------------------------------------------------------

def _stems(folder):
    found = {}
    for fname in sorted(os.listdir(folder)):
        stem, ext = os.path.splitext(fname)
        if ext.lower() in IMAGE_EXTS:
            if stem in found:
                raise FormatError(f"duplicate stem {stem!r} in {folder}")
            found[stem] = os.path.join(folder, fname)
    return found


@dataclass
class PairedDataset:
    """``root/input/<stem>.*`` matched with ``root/reference/<stem>.*``."""

    root: str
    inputs: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    splits: dict = field(default_factory=dict)

    @classmethod
    def open(cls, root):
        in_dir = os.path.join(root, "input")
        ref_dir = os.path.join(root, "reference")
        for d in (root, in_dir, ref_dir):
            if not os.path.isdir(d):
                raise FileNotFoundError(f"dataset directory not found: {d}")
        inputs, refs = _stems(in_dir), _stems(ref_dir)
        missing = sorted(set(inputs) - set(refs))
        if missing:
            raise FormatError(f"inputs without a reference: {', '.join(missing)}")
        if not inputs:
            raise FormatError(f"no input images in {in_dir}")
        ds = cls(root, inputs, {s: refs[s] for s in inputs})
        for split in ("train", "test"):
            path = os.path.join(root, f"{split}.txt")
            if os.path.exists(path):
                with open(path) as fh:
                    stems = [ln.strip() for ln in fh if ln.strip()]
                unknown = [s for s in stems if s not in inputs]
                if unknown:
                    raise FormatError(f"{path} lists unknown stems: {', '.join(unknown)}")
                ds.splits[split] = stems
            else:
                ds.splits[split] = sorted(inputs)
        return ds

    def split(self, name):
        if name not in self.splits:
            raise ContractError(f"unknown split {name!r}")
        return self.splits[name]

    def load_pair(self, stem):
        return load_image(self.inputs[stem]), load_image(self.references[stem])


def _rgb(img):
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    state: object
    log: list
    dead_parameters: list
    skipped: list

    def log_text(self):
        return format_log(self.log)


def format_log(rows):
    lines = [LOG_HEADER]
    for r in rows:
        lines.append(f"{r['step']},{r['epoch']},{r['l1']!r},{r['ls']!r},{r['lm']!r},{r['total']!r}")
    return "\n".join(lines) + "\n"


def train_pairs(pairs, cfg, state=None, perceptual=None):
    """Train on in-memory ``[(stem, input, reference), ...]`` triples."""
    if not pairs:
        raise ContractError("training split is empty")
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        h, w = pairs[0][1].shape[:2]
        state = init_state(level_count(w, h, cfg.target_low), cfg.n_luts, cfg.n_bins, cfg.seed)
    log, dead = [], None
    step = state.step
    for epoch in range(cfg.epochs):
        for idx in rng.permutation(len(pairs)):
            if cfg.max_steps and step >= cfg.max_steps:
                break
            _, img, ref = pairs[idx]
            if cfg.augment_flips:
                if rng.random() < 0.5:
                    img, ref = img[:, ::-1], ref[:, ::-1]
                if rng.random() < 0.5:
                    img, ref = img[::-1], ref[::-1]
            parts, grads, _ = loss_and_grads(state, np.ascontiguousarray(img),
                                             np.ascontiguousarray(ref), cfg, perceptual)
            if dead is None:
                dead = [n for n, g in grads.items() if not np.any(g != 0)]
                if dead:
                    logger.warning("parameters without gradient: %s", ", ".join(dead))
            norm = global_norm(grads)
            if np.isfinite(norm) and norm > cfg.clip_norm:
                logger.info("step %d: clipping gradient norm %.3g to %g",
                            step + 1, norm, cfg.clip_norm)
                grads = {k: g * (cfg.clip_norm / norm) for k, g in grads.items()}
            step += 1
            adam_step(state, grads, step, cfg)
            log.append({"step": step, "epoch": epoch, **parts})
        if cfg.max_steps and step >= cfg.max_steps:
            break
    return TrainResult(state, log, dead or [], [])


def train(dataset, cfg, state=None, perceptual=None):
    """Train on the dataset's ``train`` split; unreadable pairs are skipped."""
    pairs, skipped = [], []
    for stem in dataset.split("train"):
        try:
            img, ref = dataset.load_pair(stem)
        except (OSError, LptmError) as exc:
            logger.warning("skipping pair %s: %s", stem, exc)
            skipped.append(stem)
            continue
        img, ref = _rgb(img), _rgb(ref)
        if img.shape != ref.shape:
            logger.warning("skipping pair %s: size mismatch", stem)
            skipped.append(stem)
            continue
        pairs.append((stem, img, ref))
    if not pairs:
        raise LptmError("no readable training pairs")
    result = train_pairs(pairs, cfg, state, perceptual)
    result.skipped = skipped
    return result


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

METRIC_HEADER = ["stem", "psnr", "ssim", "delta_e"]


def image_metrics(out, ref):
    return {"psnr": psnr(out, ref), "ssim": ssim(out, ref), "delta_e": delta_e(out, ref)}


def evaluate(dataset, state, split="test", cfg=None):
    """Run inference on every pair of a split; returns per-pair metric rows."""
    pcfg = cfg.pipeline_config() if isinstance(cfg, TrainConfig) else cfg
    rows = []
    stems = dataset.split(split)
    if not stems:
        raise ContractError(f"split {split!r} is empty")
    for stem in stems:
        img, ref = dataset.load_pair(stem)
        out = pipeline.tonemap(state, _rgb(img), pcfg)
        rows.append({"stem": stem, **image_metrics(out, _rgb(ref))})
    return rows


def metric_means(rows):
    return {k: float(np.mean([r[k] for r in rows])) for k in METRIC_HEADER[1:]}


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_HEADER)
        for r in rows:
            writer.writerow([r["stem"]] + [f"{r[k]:.6f}" for k in METRIC_HEADER[1:]])


def format_metrics_table(rows):
    lines = [f"{'stem':20s} {'PSNR':>8s} {'SSIM':>8s} {'dE':>8s}"]
    for r in rows:
        lines.append(f"{r['stem']:20s} {r['psnr']:8.3f} {r['ssim']:8.4f} {r['delta_e']:8.3f}")
    m = metric_means(rows)
    lines.append(f"{'mean':20s} {m['psnr']:8.3f} {m['ssim']:8.4f} {m['delta_e']:8.3f}")
    return "\n".join(lines)
