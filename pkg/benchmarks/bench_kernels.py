"""Compiled recurrence kernels versus the numpy fallback.

Times the forward scan, the backward scan and one full training epoch with each
backend, and checks that both produce the same numbers.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from fedsec.events import generate_synthetic_corpus
from fedsec.neural import kernels
from fedsec.neural import model as nm


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_scans(backends, repeat, T=12, B=32, N=4, H=32):
    G = (3 * N + 1) * H
    rng = np.random.default_rng(0)
    zx = rng.normal(size=(T, B, G))
    mask = np.ones((T, B))
    Uh = rng.normal(size=(G, H)) * 0.1
    dh = np.ones((B, H))
    rows, outs = [], {}
    for be in backends:
        fwd = kernels.forward_scan(zx, mask, Uh, N, H, backend=be)
        bwd = kernels.backward_scan(*fwd, mask, Uh, dh, N, H, backend=be)
        outs[be] = (fwd[0], bwd[0])
        tf = best_of(lambda: kernels.forward_scan(zx, mask, Uh, N, H, backend=be), repeat)
        tb = best_of(lambda: kernels.backward_scan(*fwd, mask, Uh, dh, N, H, backend=be), repeat)
        rows.append((be, tf, tb))
    return rows, outs


def bench_epoch(backends, repeat):
    corpus = generate_synthetic_corpus(50, 500, seed=0)
    cfg = nm.ModelConfig(50, hidden_size=32)
    theta = nm.init_params(cfg)
    rows, outs = [], {}
    for be in backends:
        outs[be] = nm.local_train(theta, cfg, corpus, epochs=1, seed=0, backend=be)
        rows.append((be, best_of(lambda: nm.local_train(theta, cfg, corpus, epochs=1, seed=0, backend=be),
                                 max(1, repeat // 5))))
    return rows, outs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = ["python"] + (["compiled"] if kernels.have_compiled() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only")

    rows, outs = bench_scans(backends, args.repeat)
    print(f"{'backend':<10} {'forward ms':>11} {'backward ms':>12}")
    for be, tf, tb in rows:
        print(f"{be:<10} {tf * 1e3:>11.3f} {tb * 1e3:>12.3f}")
    erows, eouts = bench_epoch(backends, args.repeat)
    print(f"\n{'backend':<10} {'epoch s':>11}   (500 sequences, V=50, H=32, 4 lanes)")
    for be, t in erows:
        print(f"{be:<10} {t:>11.3f}")
    if len(backends) == 2:
        (_, pf, pb), (_, cf, cb) = rows
        print(f"\nspeedup: forward {pf / cf:.1f}x, backward {pb / cb:.1f}x, epoch {erows[0][1] / erows[1][1]:.1f}x")
        dev = max(float(np.max(np.abs(outs['python'][0] - outs['compiled'][0]))),
                  float(np.max(np.abs(outs['python'][1] - outs['compiled'][1]))))
        edev = float(np.max(np.abs(eouts["python"] - eouts["compiled"])))
        print(f"max deviation: scans {dev:.1e}, trained parameters {edev:.1e}")


if __name__ == "__main__":
    main()
