"""Kernel benchmark: numpy reference vs compiled extension.

Times each hot kernel on denoiser-shaped inputs, then a full denoiser
forward+backward through each backend (by rebinding the kernel table the
net module calls through).  Run from the repo root:

    python3 benchmarks/bench_backends.py [--repeats N] [--rows L]
"""

import argparse
import statistics
import time

import numpy as np

import ftlk.backends as K
from ftlk.backends import get_backend
from ftlk.diffusion import composite_from_state
from ftlk.net import Denoiser, NetConfig
from ftlk.seeding import rng_for

KERNELS = ("dense_forward", "dense_backward", "gelu_forward", "gelu_backward",
           "layernorm_forward", "layernorm_backward", "mha_forward",
           "mha_backward")


def _best_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(times)


def kernel_cases(rows, dim, heads):
    rng = rng_for(0, 777)
    x = rng.standard_normal((rows, dim))
    w = rng.standard_normal((dim, dim))
    b = rng.standard_normal(dim)
    dy = rng.standard_normal((rows, dim))
    gamma = rng.standard_normal(dim)
    beta = rng.standard_normal(dim)
    wq, wk, wv, wo = (rng.standard_normal((dim, dim)) for _ in range(4))

    def cases(impl):
        _, mean, rstd = impl.layernorm_forward(x, gamma, beta)
        _, cache = impl.mha_forward(x, x, wq, wk, wv, wo, heads)
        return {
            "dense_forward": lambda: impl.dense_forward(x, w, b),
            "dense_backward": lambda: impl.dense_backward(x, w, dy),
            "gelu_forward": lambda: impl.gelu_forward(x),
            "gelu_backward": lambda: impl.gelu_backward(x, dy),
            "layernorm_forward": lambda: impl.layernorm_forward(x, gamma, beta),
            "layernorm_backward": lambda: impl.layernorm_backward(
                x, gamma, mean, rstd, dy),
            "mha_forward": lambda: impl.mha_forward(x, x, wq, wk, wv, wo, heads),
            "mha_backward": lambda: impl.mha_backward(
                x, x, wq, wk, wv, wo, heads, cache, dy),
        }

    return cases


def denoiser_pass(backend, repeats):
    """Full forward+backward with the net module driven by one backend."""
    saved = {name: getattr(K, name) for name in KERNELS}
    for name in KERNELS:
        setattr(K, name, getattr(backend, name))
    try:
        cfg = NetConfig()
        net = Denoiser(cfg)
        store = net.init_params(3)
        rng = rng_for(1, 778)
        comp = composite_from_state(rng.standard_normal((2, cfg.latent_dim)),
                                    rng.standard_normal((7, cfg.latent_dim)),
                                    rng.standard_normal(cfg.latent_dim),
                                    rng.standard_normal(9), 0.5)
        cot = rng.standard_normal((9, cfg.latent_dim))

        def run():
            store.zero_grads()
            _, cache = net.forward_with_cache(store, comp)
            net.backward(store, comp, cot, cache=cache)

        run()  # warm up
        return _best_ms(run, repeats)
    finally:
        for name, fn in saved.items():
            setattr(K, name, fn)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200,
                    help="timing repeats per kernel (median reported)")
    ap.add_argument("--rows", type=int, default=9,
                    help="sequence rows for kernel inputs")
    args = ap.parse_args()

    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled extension not importable; build it first "
              "(pip install -e . --no-build-isolation)")
        return 1

    dim, heads = NetConfig().model_dim, NetConfig().heads
    cases = kernel_cases(args.rows, dim, heads)
    cases_py, cases_cy = cases(py), cases(cy)
    print(f"rows={args.rows} dim={dim} heads={heads} repeats={args.repeats}")
    print(f"{'kernel':<20} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name in KERNELS:
        cases_py[name]()  # warm up both
        cases_cy[name]()
        t_py = _best_ms(cases_py[name], args.repeats)
        t_cy = _best_ms(cases_cy[name], args.repeats)
        print(f"{name:<20} {t_py:>10.4f} {t_cy:>10.4f} {t_py / t_cy:>7.1f}x")

    t_py = denoiser_pass(py, max(20, args.repeats // 10))
    t_cy = denoiser_pass(cy, max(20, args.repeats // 10))
    print(f"{'denoiser fwd+bwd':<20} {t_py:>10.4f} {t_cy:>10.4f} "
          f"{t_py / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
