"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--height 480 --width 640 --repeat 5]

Times each hot kernel and one full forward pass on both backends and prints
the speedup.  Outputs of the two backends are also compared.
"""
import argparse
import time

import numpy as np

from lptm import _backend, pipeline
from lptm.llf import RemapConfig, constant_params, refine_level_fast
from lptm.predictor import init_state


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def cases(h, w, rng):
    table = rng.uniform(size=(33, 33, 33, 3))
    img = rng.uniform(size=(h, w, 3))
    grad = rng.normal(size=(h, w, 3))
    alpha = rng.uniform(0.5, 2.0, (h, w))
    beta = rng.uniform(0.5, 2.0, (h, w))
    params = constant_params((h, w), 0.7, 1.2)
    state = init_state()
    return {
        "trilinear forward": lambda: _backend.kernels.trilinear_forward(table, img),
        "trilinear backward": lambda: _backend.kernels.trilinear_backward(table, img, grad)[0],
        "remap level": lambda: _backend.kernels.remap_level(img, 0.4, alpha, beta, 0.1),
        "remap level + grad": lambda: _backend.kernels.remap_level(img, 0.4, alpha, beta, 0.1,
                                                                   False, True)[1],
        "refine level (K=16)": lambda: refine_level_fast(img, img, params, RemapConfig()),
        "full forward": lambda: pipeline.forward(state, img).output,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=480)
    ap.add_argument("--width", type=int, default=640)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    names = list(cases(8, 8, rng))
    timing = {b: {} for b in backends}
    outputs = {b: {} for b in backends}
    for b in backends:
        prev = _backend.set_backend(b)
        for name, fn in cases(args.height, args.width, np.random.default_rng(0)).items():
            timing[b][name], outputs[b][name] = best_of(fn, args.repeat)
        _backend.set_backend(prev)

    print(f"{args.width}x{args.height}, best of {args.repeat}")
    header = f"{'kernel':22s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}{'max diff':>11s}"
    print(header)
    for name in names:
        row = f"{name:22s}" + "".join(f"{timing[b][name] * 1e3:10.1f}ms" for b in backends)
        if len(backends) == 2:
            diff = np.abs(outputs["cython"][name] - outputs["numpy"][name]).max()
            row += f"{timing['numpy'][name] / timing['cython'][name]:9.1f}x{diff:11.1e}"
        print(row)


if __name__ == "__main__":
    main()
