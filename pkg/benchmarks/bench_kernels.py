#!/usr/bin/env python3
"""Benchmark the jitted kernels against their pure-numpy twins.

Times each hot kernel on a few representative shapes, verifies that both
backends agree numerically, then times a full forward+backward training
step on a batch of random graphs under each backend.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --iters 500 --nodes 40
    MOLCALIB_NO_NUMBA=1 python3 benchmarks/bench_kernels.py  # numpy only
"""

import argparse
import time

import numpy as np

from molcalib import autodiff as ad
from molcalib import kernels
from molcalib.featurize import MolecularGraph
from molcalib.losses import bce_loss
from molcalib.model import GnnModel, ModelConfig

KERNEL_CASES = [
    ("relu_forward", lambda rng, n: (rng.normal(size=(n, n)),)),
    ("sigmoid_forward", lambda rng, n: (rng.normal(size=(n, n)),)),
    ("tanh_forward", lambda rng, n: (rng.normal(size=(n, n)),)),
    ("softmax_rows", lambda rng, n: (rng.normal(size=(n, n)),)),
    ("relu_backward", lambda rng, n: (rng.normal(size=(n, n)),
                                      rng.normal(size=(n, n)))),
    ("softmax_rows_backward",
     lambda rng, n: (rng.normal(size=(n, n)),
                     kernels.NUMPY_KERNELS["softmax_rows"](
                         rng.normal(size=(n, n))))),
    ("scale_mask", lambda rng, n: (rng.normal(size=(n, n)),
                                   (rng.random((n, n)) > 0.3)
                                   .astype(np.float64), 2.0)),
]


def time_call(fn, args, iters):
    for _ in range(3):
        fn(*args)  # warmup / JIT
    start = time.perf_counter()
    for _ in range(iters):
        fn(*args)
    return (time.perf_counter() - start) / iters


def bench_kernels(sizes, iters):
    print(f"\nper-kernel timings ({iters} iters per point)")
    header = f"{'kernel':24s} {'shape':>12s} {'numpy':>12s} " \
             f"{'numba':>12s} {'speedup':>9s}  match"
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for name, make_args in KERNEL_CASES:
        for n in sizes:
            args = make_args(rng, n)
            np_fn = kernels.NUMPY_KERNELS[name]
            np_time = time_call(np_fn, args, iters)
            if kernels.NUMBA_KERNELS is None:
                print(f"{name:24s} {f'({n},{n})':>12s} "
                      f"{np_time * 1e6:10.2f}us {'-':>12s} {'-':>9s}  -")
                continue
            nb_fn = kernels.NUMBA_KERNELS[name]
            nb_time = time_call(nb_fn, args, iters)
            ok = np.allclose(np_fn(*args), nb_fn(*args),
                             rtol=0.0, atol=1e-12)
            print(f"{name:24s} {f'({n},{n})':>12s} "
                  f"{np_time * 1e6:10.2f}us {nb_time * 1e6:10.2f}us "
                  f"{np_time / nb_time:8.2f}x  {'yes' if ok else 'NO'}")


def random_batch(rng, count, nodes, width):
    graphs = []
    for _ in range(count):
        x = rng.normal(size=(nodes, width))
        a = (rng.random((nodes, nodes)) < 0.3).astype(np.float64)
        a = np.maximum(a, a.T)
        np.fill_diagonal(a, 1.0)
        graphs.append(MolecularGraph(node_features=x, adjacency=a,
                                     label=int(rng.random() < 0.5)))
    return graphs


def train_step(model, graphs):
    model.zero_grad()
    outputs = [model.forward(g, training=True,
                             rng=np.random.default_rng(0)) for g in graphs]
    p = ad.stack_scalars(outputs)
    y = np.array([g.label for g in graphs], dtype=np.float64)
    loss = bce_loss(y, p)
    ad.backward((1.0 / len(graphs)) * loss)
    return loss.item()


def bench_end_to_end(batch, nodes, iters):
    rng = np.random.default_rng(1)
    config = ModelConfig(node_embedding="gat", readout="attn", num_layers=4,
                         hidden_dim=64, graph_dim=256, input_dim=58)
    model = GnnModel(config, seed=0)
    graphs = random_batch(rng, batch, nodes, config.input_dim)

    print(f"\nend-to-end forward+backward, batch={batch}, "
          f"nodes={nodes}, GAT+attn d=64 dg=256 L=4 "
          f"({iters} steps per backend)")
    results = {}
    losses = {}
    backends = ["numpy"]
    if kernels.NUMBA_KERNELS is not None:
        backends.append("numba")
    for backend in backends:
        kernels.use_backend(backend)
        train_step(model, graphs)  # warmup / JIT
        start = time.perf_counter()
        for _ in range(iters):
            losses[backend] = train_step(model, graphs)
        results[backend] = (time.perf_counter() - start) / iters
        print(f"  {backend:6s} {results[backend] * 1e3:9.2f} ms per step")
    if len(backends) == 2:
        rel = abs(losses["numpy"] - losses["numba"]) / abs(losses["numpy"])
        print(f"  speedup {results['numpy'] / results['numba']:.2f}x, "
              f"loss agreement rel err {rel:.2e}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+",
                        default=[32, 128, 512],
                        help="square matrix sizes for kernel timings")
    parser.add_argument("--iters", type=int, default=200,
                        help="iterations per kernel timing")
    parser.add_argument("--batch", type=int, default=16,
                        help="graphs per end-to-end step")
    parser.add_argument("--nodes", type=int, default=24,
                        help="atoms per random graph")
    parser.add_argument("--steps", type=int, default=5,
                        help="end-to-end steps per backend")
    parser.add_argument("--skip-end-to-end", action="store_true")
    args = parser.parse_args()

    print(f"active backend at import: {kernels.BACKEND}")
    if kernels.NUMBA_KERNELS is None:
        print("numba unavailable or disabled; timing numpy only")
    bench_kernels(args.sizes, args.iters)
    if not args.skip_end_to_end:
        bench_end_to_end(args.batch, args.nodes, args.steps)


if __name__ == "__main__":
    main()
