"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 50]

Also times one full ordinal fit under each backend (the fallback is
selected with LOCALIV_PURE_PYTHON=1 in a subprocess).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from localiv import _kernels_py

try:
    from localiv import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

FIT_SNIPPET = """
import time, warnings, numpy as np
from localiv import mcmc, simulation
warnings.simplefilter('ignore')
rng = np.random.default_rng(0)
d = simulation.simulate_ordinal(500, 10, 3, beta_s=[0.8, -0.5], cutpoints=[[-1, 1], [-0.5, 1.5]],
                                beta=[[0.5, -0.3], [0.2, 0.4]], gamma=[0.6, -0.4], rng=rng)
t0 = time.perf_counter()
mcmc.run(d, chain_config=mcmc.ChainConfig(n_chains=1, n_iterations={n_iter}, thin=10, seed=1))
print(time.perf_counter() - t0)
"""


def kernel_cases(n, rng):
    K = 5
    y = rng.integers(1, K + 1, size=n)
    eta = rng.normal(size=n)
    cuts = np.sort(rng.normal(size=K - 1))
    mean = rng.normal(size=n)
    bound = rng.normal(size=n)
    upper = rng.integers(0, 2, size=n).astype(np.int8)
    u1 = 1.0 - rng.random(n)
    u2 = 1.0 - rng.random(n)
    s0 = np.where(upper == 1, bound + 0.5, bound - 0.5)
    out = np.empty(n)
    return {
        "truncnorm_draw": lambda m: m.truncnorm_draw(mean, 1.0, bound, upper, u1, out),
        "ordinal_loglik": lambda m: m.ordinal_loglik(y, eta, cuts, out),
        "ordinal_cumsum": lambda m: m.ordinal_cumsum(eta, cuts, out),
        "stratum_mh_ordinal": lambda m: m.stratum_mh_ordinal(s0.copy(), y, eta, 0.4, cuts, mean, 1.0,
                                                             bound, upper, u1, u2),
    }


def fit_time(pure, n_iter):
    env = dict(os.environ, LOCALIV_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(n_iter=n_iter)], env=env,
                         capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2000, help="vector length per kernel call")
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--fit-iterations", type=int, default=1000, help="0 skips the end-to-end fit")
    args = ap.parse_args(argv)

    if _kernels_c is None:
        print("compiled extension not built; only the fallback is available")
    cases = kernel_cases(args.n, np.random.default_rng(0))
    print(f"{'kernel':<20} {'python us':>12} {'cython us':>12} {'speedup':>8}")
    for name, call in cases.items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=args.repeat, repeat=3)) / args.repeat
        if _kernels_c is not None:
            t_c = min(timeit.repeat(lambda: call(_kernels_c), number=args.repeat, repeat=3)) / args.repeat
            print(f"{name:<20} {t_py * 1e6:12.1f} {t_c * 1e6:12.1f} {t_py / t_c:8.1f}")
        else:
            print(f"{name:<20} {t_py * 1e6:12.1f} {'-':>12} {'-':>8}")

    if args.fit_iterations:
        t_py = fit_time(True, args.fit_iterations)
        line = f"ordinal fit, N=500, {args.fit_iterations} sweeps: python {t_py:.2f}s"
        if _kernels_c is not None:
            t_c = fit_time(False, args.fit_iterations)
            line += f", cython {t_c:.2f}s, speedup {t_py / t_c:.1f}x"
        print(line)


if __name__ == "__main__":
    main()
