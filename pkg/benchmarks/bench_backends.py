"""Compare the pure-numpy and compiled kernel backends.

Times each fused kernel in isolation and then a full training step of the
desk-scale model under both backends, and reports the numeric deviation
between them.  Run from the repo root:

    python3 benchmarks/bench_backends.py [--repeats 50]
"""

import argparse
import time

import numpy as np

from gaflab import backend
from gaflab.scene_data import GenConfig, generate_synthetic_dataset
from gaflab.trainer import TrainConfig, train


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    x32 = rng.normal(size=(480, 64)).astype(np.float32)
    dout = rng.normal(size=x32.shape).astype(np.float32)
    gain = np.ones(64, dtype=np.float32)
    bias = np.zeros(64, dtype=np.float32)
    flat = x32.ravel().copy()
    grad = dout.ravel().copy()
    from gaflab import kernels_py

    softmax_out = kernels_py.softmax_fwd(x32)
    _, xhat, rstd = kernels_py.layernorm_fwd(x32, gain, bias, 1e-5)
    tanh_out = kernels_py.tanh_fwd(flat)

    cases = {
        "softmax_bwd": lambda k: k.softmax_bwd(softmax_out, dout),
        "layernorm_fwd": lambda k: k.layernorm_fwd(x32, gain, bias, 1e-5),
        "layernorm_bwd": lambda k: k.layernorm_bwd(xhat, rstd, gain, dout),
        "tanh_bwd": lambda k: k.tanh_bwd(tanh_out, grad),
        "adam_step": lambda k: k.adam_step(
            flat.copy(), grad, np.zeros_like(flat), np.zeros_like(flat),
            1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001,
        ),
    }
    print(f"{'kernel':<16} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, call in cases.items():
        times = {}
        for choice in backend.available_backends():
            backend.use_backend(choice)
            kernels = backend.kernels
            times[choice] = time_call(lambda: call(kernels), repeats)
        if "compiled" in times:
            ratio = times["python"] / times["compiled"]
            print(f"{name:<16} {times['python']*1e6:>8.1f}us {times['compiled']*1e6:>8.1f}us {ratio:>7.2f}x")
        else:
            print(f"{name:<16} {times['python']*1e6:>8.1f}us {'n/a':>10} {'':>8}")
    print("(softmax_fwd / tanh_fwd delegate to numpy's SIMD math in both backends)")


def bench_training():
    dataset = generate_synthetic_dataset(
        GenConfig(num_scenes=64, num_people=6, num_frames=5, seed=0)
    )
    config = TrainConfig(mode="pac", epochs=3, seed=0)
    results = {}
    for choice in backend.available_backends():
        backend.use_backend(choice)
        start = time.perf_counter()
        checkpoint = train(dataset, config)
        results[choice] = (
            time.perf_counter() - start,
            checkpoint.manifest["loss_history"][-1],
        )
    print(f"\n{'training (3 epochs, 64 scenes)':<32} {'time':>8} {'final loss':>12}")
    for choice, (elapsed, loss) in results.items():
        print(f"{choice:<32} {elapsed:>7.2f}s {loss:>12.6f}")
    if len(results) == 2:
        dev = abs(results["python"][1] - results["compiled"][1])
        ratio = results["python"][0] / results["compiled"][0]
        print(f"speedup {ratio:.2f}x, |loss deviation| {dev:.2e}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    print(f"backends available: {backend.available_backends()}")
    bench_kernels(args.repeats)
    bench_training()
    backend.use_backend(
        "compiled" if "compiled" in backend.available_backends() else "python"
    )


if __name__ == "__main__":
    main()
