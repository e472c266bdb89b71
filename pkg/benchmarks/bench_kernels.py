"""Compare the compiled and pure-Python Kalman kernels.

Usage::

    python benchmarks/bench_kernels.py [--n 300] [--repeat 5]

Times the exact log-likelihood and one objective-plus-gradient evaluation
for a few ARMA orders on both backends, checks that they agree, and prints
the speed-up.  A full ``auto_fit`` is timed with whichever backend the
package selected at import.
"""

import argparse
import time
import timeit

import numpy as np

from gts import _kalman_py, arima
from gts._backend import BACKEND

try:
    from gts import _kalman
except ImportError:  # extension not built
    _kalman = None

ORDERS = [(1, 0), (2, 1), (3, 3), (5, 5)]


def _coefs(p, q):
    phi = arima._pacf_to_coef(np.linspace(0.5, -0.3, p)) if p else np.zeros(0)
    theta = -arima._pacf_to_coef(np.linspace(0.4, -0.2, q)) if q else np.zeros(0)
    return phi, theta


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    w = np.random.default_rng(0).normal(size=args.n)
    backends = {"python": _kalman_py}
    if _kalman is not None:
        backends["cython"] = _kalman
    print(f"n = {args.n}; selected backend: {BACKEND}")
    print(f"{'kernel':<22}{'(p,q)':<8}" + "".join(f"{b:>12}" for b in backends) + f"{'speed-up':>10}")
    for p, q in ORDERS:
        phi, theta = _coefs(p, q)
        rows = {}
        vals = {}
        for name, mod in backends.items():
            vals[name] = mod.arma_loglik(w, phi, theta)
            rows.setdefault("loglik", {})[name] = _best(lambda: mod.arma_loglik(w, phi, theta), args.repeat)
            obj = mod.ConcentratedNLL(w, p, q, True, 1e-7, False)
            x0 = np.zeros(p + q + 1)
            rows.setdefault("objective+gradient", {})[name] = _best(lambda: obj.value_and_grad(x0), args.repeat)
        if len(vals) == 2:
            np.testing.assert_allclose(vals["python"], vals["cython"], rtol=1e-9)
        for kernel, times in rows.items():
            cells = "".join(f"{times[b] * 1e6:>10.1f}us" for b in backends)
            ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{kernel:<22}{f'({p},{q})':<8}{cells}{ratio:>9.1f}x")
    x = np.random.default_rng(1).normal(size=args.n).cumsum()
    t0 = time.perf_counter()
    model = arima.auto_fit(x)
    print(f"auto_fit on a random walk ({BACKEND}): {time.perf_counter() - t0:.2f} s -> {model.order}")


if __name__ == "__main__":
    main()
