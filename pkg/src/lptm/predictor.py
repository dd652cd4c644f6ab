"""Learnable predictors and the model state.

Two small fully-convolutional networks with hand-written backward passes:

* the weight predictor maps the low-pass image to one weight map per basis
  LUT (3->16->32->32->16->N, dilations 1,2,4,2,1);
* a parameter prediction block (PPB) per pyramid level maps the level's
  inputs to the alpha/beta maps of the remapping function (in->16->16->2).

All convolutions are 3x3, stride 1, zero-padded to preserve size, with a
leaky rectifier (slope 0.1) between layers.  Feature maps use the same
``(H, W, C)`` layout as images.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, TruncatedFileError
from .lut import identity_lut, zero_lut

LEAK = 0.1
WEIGHT_NET_WIDTHS = (16, 32, 32, 16)
WEIGHT_NET_DILATIONS = (1, 2, 4, 2, 1)
PPB_WIDTHS = (16, 16)
ALPHA_FLOOR = 0.01
SOFTPLUS_ONE = float(np.log(np.e - 1.0))  # softplus(SOFTPLUS_ONE) == 1
FINAL_LAYER_SCALE = 1e-3
ROW_BLOCK = 64

CHECKPOINT_MAGIC = b"LPTM"
CHECKPOINT_VERSION = 1


@dataclass
class ConvNet:
    kernels: list
    biases: list
    dilations: list

    @property
    def in_channels(self):
        return self.kernels[0].shape[2]

    @property
    def out_channels(self):
        return self.kernels[-1].shape[3]

    def n_params(self):
        return sum(k.size + b.size for k, b in zip(self.kernels, self.biases))

    def astype(self, dtype):
        return ConvNet([k.astype(dtype) for k in self.kernels],
                       [b.astype(dtype) for b in self.biases], list(self.dilations))


def init_convnet(rng, channels, dilations, final_bias, dtype=np.float32):
    """Kaiming-uniform kernels (fan-in, leaky gain), zero biases except the last.

    The final kernel is shrunk by ``FINAL_LAYER_SCALE`` so the network starts
    out emitting (almost exactly) ``final_bias`` everywhere.
    """
    gain = np.sqrt(2.0 / (1.0 + LEAK ** 2))
    kernels, biases = [], []
    for li, (cin, cout) in enumerate(zip(channels[:-1], channels[1:])):
        bound = gain * np.sqrt(3.0 / (9 * cin))
        k = rng.uniform(-bound, bound, size=(3, 3, cin, cout))
        b = np.zeros(cout)
        if li == len(channels) - 2:
            k *= FINAL_LAYER_SCALE
            b[:] = final_bias
        kernels.append(k.astype(dtype))
        biases.append(b.astype(dtype))
    return ConvNet(kernels, biases, list(dilations))


# ----------------------------------------------------------------------------
# convolution
# ----------------------------------------------------------------------------

def _taps(xp, d, y0, y1, w):
    """The nine shifted views of padded input ``xp`` for output rows y0:y1."""
    return [xp[y0 + dy * d:y1 + dy * d, dx * d:dx * d + w] for dy in range(3) for dx in range(3)]


def conv2d(x, kernel, bias, dilation=1):
    """Same-size 3x3 dilated convolution (cross-correlation) of an (H, W, Cin) map."""
    h, w, cin = x.shape
    cout = kernel.shape[3]
    d = dilation
    xp = np.pad(x, ((d, d), (d, d), (0, 0)))
    kmat = kernel.reshape(9 * cin, cout).astype(np.float64)
    out = np.empty((h, w, cout))
    for y0 in range(0, h, ROW_BLOCK):
        y1 = min(y0 + ROW_BLOCK, h)
        cols = np.concatenate(_taps(xp, d, y0, y1, w), axis=2)
        out[y0:y1] = (cols.reshape(-1, 9 * cin) @ kmat).reshape(y1 - y0, w, cout)
    out += bias
    return out


def conv2d_backward(x, kernel, dilation, grad_out, need_input_grad=True):
    """Return ``(grad_kernel, grad_bias, grad_x)`` for :func:`conv2d`."""
    h, w, cin = x.shape
    cout = kernel.shape[3]
    d = dilation
    xp = np.pad(x, ((d, d), (d, d), (0, 0)))
    kmat = kernel.reshape(9 * cin, cout).astype(np.float64)
    gk = np.zeros((9 * cin, cout))
    gxp = np.zeros(xp.shape) if need_input_grad else None
    for y0 in range(0, h, ROW_BLOCK):
        y1 = min(y0 + ROW_BLOCK, h)
        g = grad_out[y0:y1].reshape(-1, cout)
        cols = np.concatenate(_taps(xp, d, y0, y1, w), axis=2).reshape(-1, 9 * cin)
        gk += cols.T @ g
        if need_input_grad:
            gcols = (g @ kmat.T).reshape(y1 - y0, w, 9, cin)
            for t, (dy, dx) in enumerate((dy, dx) for dy in range(3) for dx in range(3)):
                gxp[y0 + dy * d:y1 + dy * d, dx * d:dx * d + w] += gcols[:, :, t]
    grad_x = gxp[d:d + h, d:d + w] if need_input_grad else None
    return gk.reshape(kernel.shape), grad_out.sum(axis=(0, 1)), grad_x


def _leaky(z):
    return np.where(z > 0.0, z, LEAK * z)


def net_forward(net, x):
    """Run the conv stack; returns ``(output, cache)`` for :func:`net_backward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != net.in_channels:
        raise ContractError(
            f"network expects {net.in_channels} input channels, got shape {x.shape}")
    inputs, pre = [], []
    n = len(net.kernels)
    for li in range(n):
        inputs.append(x)
        z = conv2d(x, net.kernels[li], net.biases[li], net.dilations[li])
        pre.append(z)
        x = _leaky(z) if li < n - 1 else z
    return x, (inputs, pre)


def net_backward(net, cache, grad_out, need_input_grad=True):
    """Reverse-mode pass; returns ``(grad_kernels, grad_biases, grad_input)``."""
    inputs, pre = cache
    n = len(net.kernels)
    gks, gbs = [None] * n, [None] * n
    g = np.asarray(grad_out, dtype=np.float64)
    for li in range(n - 1, -1, -1):
        if li < n - 1:
            g = np.where(pre[li] > 0.0, g, LEAK * g)
        want_x = need_input_grad or li > 0
        gks[li], gbs[li], g = conv2d_backward(inputs[li], net.kernels[li], net.dilations[li],
                                              g, want_x)
    return gks, gbs, g


def conv_backward(net, inputs, grad_out):
    """Gradients of ``sum(grad_out * net(inputs))`` w.r.t. parameters and inputs."""
    _, cache = net_forward(net, inputs)
    gks, gbs, gx = net_backward(net, cache, grad_out)
    return (gks, gbs), gx


# ----------------------------------------------------------------------------
# predictors
# ----------------------------------------------------------------------------

def predict_weights(net, low, return_cache=False):
    """Per-pixel fusion weights ``(H, W, N)`` from the low-pass image (unconstrained)."""
    low = np.asarray(low, dtype=np.float64)
    if low.ndim != 3 or low.shape[2] != 3:
        raise ContractError("weight predictor needs a 3-channel image")
    out, cache = net_forward(net, low)
    return (out, cache) if return_cache else out


@dataclass
class ParamMaps:
    """Remapping parameters for one pyramid level: alpha > 0 and beta >= 0, each (H, W)."""

    alpha: np.ndarray
    beta: np.ndarray
    level: int = 0


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def predict_params(ppb, inputs, level=0, return_cache=False):
    """Alpha/beta maps from a level's concatenated inputs (7 or 6 channels)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] not in (6, 7):
        raise ContractError(f"PPB input must have 6 or 7 channels, got shape {inputs.shape}")
    if inputs.shape[2] != ppb.in_channels:
        raise ContractError(
            f"PPB built for {ppb.in_channels} channels, got {inputs.shape[2]}")
    raw, cache = net_forward(ppb, inputs)
    params = ParamMaps(_softplus(raw[:, :, 0]) + ALPHA_FLOOR, _softplus(raw[:, :, 1]), level)
    return (params, (raw, cache)) if return_cache else params


def predict_params_backward(ppb, cache, grad_alpha, grad_beta, need_input_grad=True):
    """Backpropagate alpha/beta gradients; returns ``(grad_kernels, grad_biases, grad_inputs)``."""
    raw, net_cache = cache
    g = np.stack([grad_alpha * _sigmoid(raw[:, :, 0]), grad_beta * _sigmoid(raw[:, :, 1])],
                 axis=2)
    return net_backward(ppb, net_cache, g, need_input_grad)


# ----------------------------------------------------------------------------
# model state
# ----------------------------------------------------------------------------

@dataclass
class ModelState:
    """Basis LUT lattices, the weight predictor, one PPB per refined level
    (``ppbs[0]`` serves the coarsest band) and Adam moments."""

    luts: list
    weight_net: ConvNet
    ppbs: list
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0

    @property
    def n_bins(self):
        return self.luts[0].shape[0]

    @property
    def n_luts(self):
        return len(self.luts)

    def named_parameters(self):
        """Name -> parameter array, in a fixed order.  Arrays are live references."""
        params = {}
        for n, t in enumerate(self.luts):
            params[f"lut.{n}"] = t
        for prefix, net in [("weight_net", self.weight_net)] + [
                (f"ppb.{j}", p) for j, p in enumerate(self.ppbs)]:
            for li, (k, b) in enumerate(zip(net.kernels, net.biases)):
                params[f"{prefix}.{li}.kernel"] = k
                params[f"{prefix}.{li}.bias"] = b
        return params

    def n_params(self):
        return sum(p.size for p in self.named_parameters().values())

    def astype(self, dtype):
        return ModelState([t.astype(dtype) for t in self.luts], self.weight_net.astype(dtype),
                          [p.astype(dtype) for p in self.ppbs],
                          {k: v.copy() for k, v in self.adam_m.items()},
                          {k: v.copy() for k, v in self.adam_v.items()}, self.step)

    def copy(self):
        return self.astype(self.luts[0].dtype)


def ppb_in_channels(j):
    return 7 if j == 0 else 6


def init_state(n_levels=3, n_luts=3, n_bins=33, seed=0, dtype=np.float32):
    """Near-identity initialization.

    LUT 0 is the identity and the others are zero; the weight predictor's
    final bias is one-hot on LUT 0; PPB final biases make softplus emit 1.
    """
    if n_levels < 1 or n_luts < 1:
        raise ContractError("need at least one level and one LUT")
    rng = np.random.default_rng(seed)
    luts = [identity_lut(n_bins).table.astype(dtype)]
    luts += [zero_lut(n_bins).table.astype(dtype) for _ in range(n_luts - 1)]
    onehot = np.zeros(n_luts)
    onehot[0] = 1.0
    weight_net = init_convnet(rng, (3,) + WEIGHT_NET_WIDTHS + (n_luts,),
                              WEIGHT_NET_DILATIONS, onehot, dtype)
    ppbs = [init_convnet(rng, (ppb_in_channels(j),) + PPB_WIDTHS + (2,), (1, 1, 1),
                         SOFTPLUS_ONE, dtype) for j in range(n_levels)]
    return ModelState(luts, weight_net, ppbs)


def describe(state):
    """Human-readable table of parameter tensors and totals."""
    lines = []
    for name, p in state.named_parameters().items():
        lines.append(f"{name:28s} {str(tuple(p.shape)):22s} {p.size:>9d}")
    lines.append(f"{'total':28s} {'':22s} {state.n_params():>9d}")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------------

def _state_tensors(state):
    tensors = dict(state.named_parameters())
    for name, m in state.adam_m.items():
        tensors[f"adam_m.{name}"] = m
    for name, v in state.adam_v.items():
        tensors[f"adam_v.{name}"] = v
    tensors["meta.step"] = np.array([state.step], dtype=np.float64)
    for prefix, net in [("weight_net", state.weight_net)] + [
            (f"ppb.{j}", p) for j, p in enumerate(state.ppbs)]:
        tensors[f"meta.{prefix}.dilations"] = np.asarray(net.dilations, dtype=np.float64)
    return tensors


def write_checkpoint(state, path):
    tensors = _state_tensors(state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"checkpoint truncated while reading {what}")
    return data


def _walk(fh, load):
    if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a model checkpoint (bad magic)")
    version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
        name = _read_exact(fh, nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{name} dims"))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if load:
            data = np.frombuffer(_read_exact(fh, nbytes, name), dtype="<f4")
            out.append((name, data.astype(np.float32).reshape(shape)))
        else:
            here = fh.tell()
            end = fh.seek(0, 2)
            if end - here < nbytes:
                raise TruncatedFileError(f"checkpoint truncated in tensor {name}")
            fh.seek(here + nbytes)
            out.append((name, tuple(shape)))
    return out


def list_tensors(path):
    """Names and shapes of all tensors, skipping over the data."""
    with open(path, "rb") as fh:
        return _walk(fh, load=False)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        tensors = dict(_walk(fh, load=True))

    def net(prefix):
        li = 0
        kernels, biases = [], []
        while f"{prefix}.{li}.kernel" in tensors:
            kernels.append(tensors[f"{prefix}.{li}.kernel"])
            biases.append(tensors[f"{prefix}.{li}.bias"])
            li += 1
        if not kernels:
            raise FormatError(f"checkpoint has no tensors for {prefix}")
        dil = [int(d) for d in tensors[f"meta.{prefix}.dilations"]]
        return ConvNet(kernels, biases, dil)

    luts = []
    while f"lut.{len(luts)}" in tensors:
        luts.append(tensors[f"lut.{len(luts)}"])
    if not luts:
        raise FormatError("checkpoint has no LUT tensors")
    ppbs = []
    while f"ppb.{len(ppbs)}.0.kernel" in tensors:
        ppbs.append(net(f"ppb.{len(ppbs)}"))
    state = ModelState(luts, net("weight_net"), ppbs, step=int(tensors["meta.step"][0]))
    for name in state.named_parameters():
        if f"adam_m.{name}" in tensors:
            state.adam_m[name] = tensors[f"adam_m.{name}"]
            state.adam_v[name] = tensors[f"adam_v.{name}"]
    return state


def checkpoint_io(state, path, direction):
    if direction == "write":
        write_checkpoint(state, path)
        return None
    if direction == "read":
        return read_checkpoint(path)
    raise ContractError(f"direction must be 'read' or 'write', got {direction!r}")
