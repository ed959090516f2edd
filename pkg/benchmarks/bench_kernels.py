"""Compare the pure-python and cython compute backends.

Times the x0-prediction forward pass and the fused loss+gradient kernel
over a few model sizes, then reports per-call medians and the speedup.
Run from the repository root:

    python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mdmkit.denoiser import ArchConfig, tiny_init
from mdmkit.nn import available_backends, get_backend

SHAPES = [
    # (label, vocab, layout length, embed dim, layers, heads, ff dim)
    ("tiny", 16, 16, 16, 1, 2, 32),
    ("small", 40, 33, 64, 2, 4, 128),
    ("wide", 64, 48, 96, 2, 4, 192),
]


def _median_call(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_shape(label, V, L, d, n_layers, H, d_ff, repeats):
    arch = ArchConfig(
        vocab_size=V, max_len=L, embed_dim=d, n_layers=n_layers, n_heads=H, ff_dim=d_ff
    )
    rng = np.random.default_rng(0)
    params = tiny_init(arch, rng)
    cond_len = L // 3
    tokens = rng.integers(4, V, size=L).astype(np.int64)
    tokens[cond_len - 1] = 2
    target_len = L - cond_len
    masked = rng.random(target_len) < 0.5
    tokens[cond_len:][masked] = 1
    targets = rng.integers(4, V, size=target_len).astype(np.int64)
    args = (tokens, cond_len, V, L, d, H, n_layers, d_ff, 1)

    rows = []
    for name in available_backends():
        be = get_backend(name)
        fwd = _median_call(lambda: be.forward_logprobs(params, *args), repeats)
        grad = _median_call(
            lambda: be.masked_loss_grad(params, *args, targets, masked, 2.0), repeats
        )
        rows.append((name, fwd, grad))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=200)
    opts = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled backend not built; timing the python backend only")

    header = f"{'shape':8s} {'backend':8s} {'forward':>12s} {'loss+grad':>12s}"
    print(header)
    print("-" * len(header))
    for label, V, L, d, n_layers, H, d_ff in SHAPES:
        rows = bench_shape(label, V, L, d, n_layers, H, d_ff, opts.repeats)
        for name, fwd, grad in rows:
            print(
                f"{label:8s} {name:8s} {fwd * 1e6:10.0f}us {grad * 1e6:10.0f}us"
            )
        if len(rows) == 2:
            (_, f_py, g_py), (_, f_cy, g_cy) = rows
            print(
                f"{label:8s} {'speedup':8s} {f_py / f_cy:10.1f}x {g_py / g_cy:10.1f}x"
            )
    print()
    print(
        "Decode cost is dominated by forward calls (T * (1 + M) per sequence"
        " with the value search on); training by loss+grad calls."
    )


if __name__ == "__main__":
    main()
