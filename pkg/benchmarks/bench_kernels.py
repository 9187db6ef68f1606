"""Timing comparison of the compiled HMM kernels against the pure-Python fallback.

Run with ``python benchmarks/bench_kernels.py``.  Both backends are imported
directly, so this works regardless of which one the package selected.
"""

import argparse
import time

import numpy as np

from fallhmm.hmm import _pykernels
from fallhmm.hmm._backend import BACKEND

try:
    from fallhmm.hmm import _ckernels
except ImportError:
    _ckernels = None


def make_case(rng, T, n_states, n_dims):
    log_pi = np.log(rng.dirichlet(np.ones(n_states)))
    log_trans = np.log(rng.dirichlet(np.ones(n_states), size=n_states))
    means = rng.normal(size=(n_states, n_dims))
    covs = rng.uniform(0.5, 2.0, size=(n_states, n_dims))
    obs = rng.normal(size=(T, n_dims))
    log_obs = _pykernels.gaussian_log_obs(obs, means, covs)
    return log_pi, log_trans, log_obs


def bench(kernels, cases, repeats):
    timings = {}
    for name in ("forward", "backward", "viterbi"):
        fn = getattr(kernels, name)
        start = time.perf_counter()
        for _ in range(repeats):
            for log_pi, log_trans, log_obs in cases:
                if name == "backward":
                    fn(log_trans, log_obs)
                else:
                    fn(log_pi, log_trans, log_obs)
        timings[name] = (time.perf_counter() - start) / repeats
    return timings


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sequences", type=int, default=200)
    parser.add_argument("--length", type=int, default=64)
    parser.add_argument("--states", type=int, default=4)
    parser.add_argument("--dims", type=int, default=31)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = [make_case(rng, args.length, args.states, args.dims)
             for _ in range(args.sequences)]

    print(f"package backend: {BACKEND}")
    print(f"{args.sequences} sequences, T={args.length}, "
          f"N={args.states}, D={args.dims}, best of {args.repeats} repeats\n")
    py = bench(_pykernels, cases, args.repeats)
    if _ckernels is None:
        print("compiled backend unavailable; pure-Python timings only")
        for name, t in py.items():
            print(f"  {name:<9} python {t * 1e3:8.2f} ms")
        return
    cc = bench(_ckernels, cases, args.repeats)
    print(f"  {'kernel':<9} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name in py:
        print(f"  {name:<9} {py[name] * 1e3:8.2f}ms {cc[name] * 1e3:8.2f}ms "
              f"{py[name] / cc[name]:7.1f}x")


if __name__ == "__main__":
    main()
