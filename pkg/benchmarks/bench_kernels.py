"""Compare the numba and numpy kernel backends on window-sized workloads.

Shapes mirror one 336-pixel sliding window: 441 tokens for a 16-pixel patch
grid (21x21) and, with --full, 1764 tokens for an 8-pixel grid (42x42).
Besides timing, every op's outputs are checked bit-identical across
backends, which is the property that lets the test suite run either one.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--full]
"""

import argparse
import time

import numpy as np

from proxyseg import backend, kernels


def build_cases(rng, tokens, grid):
    d_model, d_head, d_joint, classes = 768, 64, 512, 21
    sim_feats = rng.randn(tokens, d_model).astype(np.float32)
    attn_scores = rng.randn(tokens, tokens).astype(np.float32)
    mask = np.where(rng.rand(tokens, tokens) < 0.5, -np.inf, 0.0)
    np.fill_diagonal(mask, 0.0)
    attn = rng.rand(tokens, tokens).astype(np.float32)
    attn /= attn.sum(axis=1, keepdims=True)
    values = rng.randn(tokens, d_head).astype(np.float32)
    fused = rng.randn(tokens, d_model).astype(np.float32)
    ln_w = np.ones(d_model, dtype=np.float32)
    ln_b = np.zeros(d_model, dtype=np.float32)
    logits_grid = rng.randn(grid, grid, classes).astype(np.float32)
    return [
        (f"matmul ({tokens}x{d_model})@({d_model}x{tokens})",
         lambda: kernels.matmul(sim_feats, sim_feats.T)),
        (f"matmul ({tokens}x{tokens})@({tokens}x{d_head})",
         lambda: kernels.matmul(attn, values)),
        (f"softmax_masked ({tokens}x{tokens})",
         lambda: kernels.softmax_masked(attn_scores, mask)),
        (f"layer_norm ({tokens}x{d_model})",
         lambda: kernels.layer_norm(fused, ln_w, ln_b)),
        (f"l2_normalize_rows ({tokens}x{d_model})",
         lambda: kernels.l2_normalize_rows(fused)),
        (f"bilinear_resize ({grid}x{grid}x{classes}) -> 336px",
         lambda: kernels.bilinear_resize_grid(logits_grid, 336, 336)),
        (f"mean_all ({tokens}x{tokens})",
         lambda: kernels.mean_all(attn_scores)),
    ]


def time_op(fn, repeats):
    fn()  # warm-up, also triggers jit compilation
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--full", action="store_true",
                        help="use the 1764-token grid of an 8-pixel-patch model")
    args = parser.parse_args()

    tokens, grid = (1764, 42) if args.full else (441, 21)
    print(f"window workload: {tokens} tokens, best of {args.repeats} runs")
    if not backend.HAS_NUMBA:
        print("numba is not installed; timing the numpy backend only")

    names = ["numpy"] + (["numba"] if backend.HAS_NUMBA else [])
    rng = np.random.RandomState(99)
    cases = build_cases(rng, tokens, grid)

    results = {}
    outputs = {}
    for name in names:
        backend.set_backend(name)
        results[name] = [time_op(fn, args.repeats) for _, fn in cases]
        outputs[name] = [np.asarray(fn()) for _, fn in cases]

    header = f"{'op':<44}" + "".join(f"{n + ' (ms)':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}{'match':>8}"
    print(header)
    print("-" * len(header))
    for i, (label, _) in enumerate(cases):
        row = f"{label:<44}"
        for name in names:
            row += f"{results[name][i] * 1e3:>14.2f}"
        if len(names) == 2:
            ratio = results["numpy"][i] / results["numba"][i]
            same = np.array_equal(outputs["numpy"][i], outputs["numba"][i])
            row += f"{ratio:>9.2f}x{'yes' if same else 'NO':>8}"
        print(row)


if __name__ == "__main__":
    main()
