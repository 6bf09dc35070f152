"""Time MLP forward and backward passes on each available kernel backend.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from episteme import kernels
from episteme.diffnet import MlpSpec, build_mlp

SHAPES = {
    "vae-encoder": [4, 16, 16, 4],
    "q-trunk": [6, 32, 32],
    "wide": [64, 256, 256, 64],
}


def bench(backend: str, sizes, batch: int, repeat: int) -> tuple[float, float]:
    impl = kernels.load_backend(backend)
    spec = MlpSpec.make(sizes, hidden="tanh", seed=0)
    net = build_mlp(spec)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, sizes[0]))
    g = rng.normal(size=(batch, sizes[-1]))
    acts = impl.mlp_forward(x, net.weights, net.biases, spec.codes)
    n = max(1, repeat // max(1, batch // 8))
    fwd = timeit.timeit(lambda: impl.mlp_forward(x, net.weights, net.biases, spec.codes), number=n) / n
    bwd = timeit.timeit(lambda: impl.mlp_backward(acts, net.weights, spec.codes, g), number=n) / n
    return fwd * 1e6, bwd * 1e6


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=2000)
    args = p.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default: {kernels.BACKEND})")
    print(f"{'network':<12} {'batch':>5} {'backend':<8} {'fwd us':>9} {'bwd us':>9}")
    for name, sizes in SHAPES.items():
        for batch in (1, 64):
            base = None
            for backend in sorted(backends, key=lambda b: b != "python"):
                fwd, bwd = bench(backend, sizes, batch, args.repeat)
                note = ""
                if backend == "python":
                    base = (fwd, bwd)
                elif base is not None:
                    note = f"  x{base[0] / fwd:.1f} / x{base[1] / bwd:.1f} vs python"
                print(f"{name:<12} {batch:>5} {backend:<8} {fwd:>9.2f} {bwd:>9.2f}{note}")


if __name__ == "__main__":
    main()
