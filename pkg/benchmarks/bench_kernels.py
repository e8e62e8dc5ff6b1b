"""Time every compiled kernel on both backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Numba timings exclude the first (compiling) call. Running the whole script
with ELSTMD_DISABLE_NUMBA=1 times the numpy paths only.
"""
import argparse
import time

import numpy as np

from elstmd import kernels
from elstmd.model import ModelConfig, forward, init_model
from elstmd.graph_store import SampleWindow
from elstmd.training import LossConfig, backward, build_penalty


def _time(fn, repeat):
    fn()  # warm-up / JIT compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n_graph=200, n_model=64):
    rng = np.random.default_rng(0)
    g = (rng.random((n_graph, n_graph)) < 0.03).astype(np.uint8)
    np.fill_diagonal(g, 0)
    sym = ((g | g.T) > 0).astype(np.uint8)
    seq = (rng.random((320, 60, 60)) < 0.02).astype(np.uint8)

    d, din, N = 64, 64, 10
    W = rng.standard_normal((4 * d, d + din)) * 0.1
    b = np.zeros(4 * d)
    xs = rng.standard_normal((N, n_model, din))
    h0 = np.zeros((n_model, d))
    fw = kernels.lstm_layer_forward(W, b, xs, h0, h0, backend="numpy")
    dh = rng.standard_normal(fw[4].shape)

    cfg = ModelConfig(n=n_model, window_len=N, encoder_dims=[64], lstm_dims=[64, 64], decoder_dims=[n_model])
    params = init_model(cfg, seed=0)
    adj = (rng.random((N + 1, n_model, n_model)) < 0.1).astype(np.uint8)
    win = SampleWindow(adj[:N], adj[N], N)
    P = build_penalty(win.target)
    lc = LossConfig()

    def train_step(backend):
        _, tr = forward(params, win, backend=backend)
        backward(params, tr, win, P, lc, backend=backend)

    return {
        f"edge_betweenness n={n_graph}": lambda be: kernels.edge_betweenness_matrix(g, be),
        "transient_keep 320x60x60": lambda be: kernels.transient_keep(seq, 8, be),
        f"node_triangles n={n_graph}": lambda be: kernels.node_triangles(sym, be),
        f"lstm_forward n={n_model} d=64 N=10": lambda be: kernels.lstm_layer_forward(W, b, xs, h0, h0, be),
        f"lstm_backward n={n_model} d=64 N=10": lambda be: kernels.lstm_layer_backward(W, *fw[:4], dh, be),
        f"forward+backward n={n_model}": train_step,
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"{'kernel':40s}" + "".join(f"{b:>14s}" for b in backends) + ("  numba speedup" if len(backends) > 1 else ""))
    for name, fn in cases().items():
        times = [_time(lambda: fn(be), args.repeat) for be in backends]
        row = f"{name:40s}" + "".join(f"{t * 1e3:11.3f} ms" for t in times)
        if len(times) > 1:
            row += f"   {times[1] / times[0]:8.2f}x"  # numpy time / numba time
        print(row)


if __name__ == "__main__":
    main()
