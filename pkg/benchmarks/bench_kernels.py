#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-NumPy fallback.

Times the single-vector forward/vjp hot path on the reference denoiser
trunk shape, then a full guided chunk generation through each backend.

Run: python3 benchmarks/bench_kernels.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from sgds import diffusion as df
from sgds import worldsim as ws
from sgds.guidance import GuidanceWeights
from sgds.nnkit import _kernels_py, init_params
from sgds.nnkit.mlp import MLPSpec

try:
    from sgds.nnkit import _kernels as _ext
except ImportError:
    _ext = None


def _time(fn, repeats):
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(repeats):
    spec = MLPSpec((272, 192, 192, 128))
    params = init_params(spec, 0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(272)
    cot = rng.standard_normal(128)
    widths = spec.widths_array()
    rows = []
    backends = [("py", _kernels_py)] + ([("ext", _ext)] if _ext else [])
    for name, mod in backends:
        fwd = _time(lambda: mod.forward(widths, params.values, x), repeats)
        vjp = _time(lambda: mod.vjp(widths, params.values, x, cot), repeats)
        vin = _time(lambda: mod.vjp_input(widths, params.values, x, cot), repeats)
        rows.append((name, fwd, vjp, vin))
    return rows


def bench_generation(repeats):
    """One guided chunk (T=50) per repeat; exercises the whole hot path."""
    import importlib

    from sgds.nnkit import kernels

    wcfg = ws.WorldConfig()
    spec = df.DenoiserSpec(chunk_dim=wcfg.chunk_dim, conditions=2, hidden=(192, 192))
    params = df.init_denoiser(spec, 0)
    sched = df.make_schedule(50, 1e-4, 0.15)
    context = ws.chunk_episode(ws.make_episode(wcfg, 0, 0, 8), 4)[0]
    weights = GuidanceWeights(1.5, 2.0, 0.0)
    rows = []
    available = ["py"] + (["ext"] if _ext else [])
    for name in available:
        mod = _ext if name == "ext" else _kernels_py
        kernels.forward, kernels.vjp, kernels.vjp_input = (
            mod.forward,
            mod.vjp,
            mod.vjp_input,
        )
        seconds = _time(
            lambda: df.generate_chunk(
                spec, params, context, 0, weights, sched, np.random.default_rng(1)
            ),
            repeats,
        )
        rows.append((name, seconds))
    importlib.reload(kernels)
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()
    if _ext is None:
        print("compiled extension not available; timing the fallback only")

    print(f"single-call kernels ({args.repeats} repeats, trunk 272-192-192-128):")
    rows = bench_kernels(args.repeats)
    base = {name: fwd for name, fwd, _, _ in rows}
    for name, fwd, vjp, vin in rows:
        speed = base["py"] / fwd if "py" in base else float("nan")
        print(
            f"  {name:3s}  forward {fwd * 1e6:8.1f} us   vjp {vjp * 1e6:8.1f} us   "
            f"vjp_input {vin * 1e6:8.1f} us   forward speedup x{speed:.2f}"
        )

    gen_repeats = max(2, args.repeats // 200)
    print(f"guided chunk generation, T=50 ({gen_repeats} repeats):")
    py_time = None
    for name, seconds in bench_generation(gen_repeats):
        py_time = seconds if name == "py" else py_time
        speed = py_time / seconds if py_time else float("nan")
        print(f"  {name:3s}  {seconds * 1e3:8.1f} ms per chunk   speedup x{speed:.2f}")


if __name__ == "__main__":
    main()
