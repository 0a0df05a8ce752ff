"""Compare the numba kernels with the pure-numpy fallback.

Usage::

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --pipeline # also time one select_j per backend

The pipeline timing runs each backend in a subprocess, selecting the numpy
path with ``TSDMFB_DISABLE_NUMBA=1``.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from tsdmfb.kernels import _numba, _numpy


def best_of(fn, repeat=5, number=3):
    fn()  # warm up (and compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def cases(rng):
    n, D, J = 5000, 8, 5
    y = rng.dirichlet(np.full(D, 2.0), n)
    logy = np.log(y)
    alphas = rng.uniform(1.0, 20.0, (J, D))
    logp = rng.normal(size=(n, J)) * 10
    w = rng.dirichlet(np.ones(J), n)
    stats = (w.T @ logy) / w.sum(axis=0)[:, None]
    x = rng.uniform(0.01, 50.0, 20000)
    return {
        "gammaln (20k)": lambda k: k.gammaln(x),
        "digamma (20k)": lambda k: k.digamma(x),
        "component_log_pdf (5000x8, J=5)": lambda k: k.component_log_pdf(logy, alphas),
        "log_normalize_rows (5000x5)": lambda k: k.log_normalize_rows(logp),
        "dirichlet_mle_batch (J=5, D=8)": lambda k: k.dirichlet_mle_batch(
            stats, np.ones((J, D)), 1e-8, 1e-8, 1000
        ),
    }


PIPELINE = """
import time
from tsdmfb import synth, inner_em, kernels
d = synth.generate(synth.random_spec(1, 3, 5, 600, seed=3)).dataset.points
inner_em.select_j(d[:60], range(1, 3), inner_em.EMConfig(n_starts=2))  # warm up
t0 = time.perf_counter()
inner_em.select_j(d, range(1, 6), inner_em.EMConfig(seed=3))
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def pipeline():
    for flag in ("1", "0"):
        env = dict(os.environ, TSDMFB_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", PIPELINE], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"select_j J=1..5, n=600, D=5  [{backend:5s}] {float(secs):8.3f} s")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pipeline", action="store_true")
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_np = best_of(lambda: fn(_numpy))
        t_nb = best_of(lambda: fn(_numba))
        print(f"{name:36s} {t_np * 1e3:8.3f}ms {t_nb * 1e3:8.3f}ms {t_np / t_nb:7.1f}x")
    if args.pipeline:
        pipeline()


if __name__ == "__main__":
    main()
