"""Benchmark the compiled simulation kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``.  The workload mirrors the
Monte Carlo VaR oracle: compound sums over a Poisson event panel, with and
without per-event capping.
"""

import time

import numpy as np

from tailrisk._kernels import _pyfallback

try:
    from tailrisk._kernels import _core
except ImportError:
    _core = None


def make_panel(n_sims, lam, seed):
    rng = np.random.default_rng(seed)
    counts = rng.poisson(lam, size=n_sims).astype(np.int64)
    uniforms = rng.random(int(counts.sum()))
    return uniforms, counts


def timeit(fn, *args, reps=3):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    n_sims, lam = 2_000_000, 10.0
    uniforms, counts = make_panel(n_sims, lam, seed=42)
    print(f"panel: {n_sims:,} simulations, {uniforms.size:,} events (lambda={lam})")
    print(f"{'kernel':<28}{'backend':<10}{'best (s)':>10}{'events/s':>14}")

    cases = [
        ("pot_compound_sums", (uniforms, counts, 1.0, 1.5, 0.1)),
        ("pot_compound_capped_sums", (uniforms, counts, 1.0, 1.5, 0.1, 50.0)),
    ]
    for name, args in cases:
        ref = None
        for label, mod in (("cython", _core), ("python", _pyfallback)):
            if mod is None:
                print(f"{name:<28}{label:<10}{'not built':>10}")
                continue
            best, out = timeit(getattr(mod, name), *args)
            out0 = out[0] if isinstance(out, tuple) else out
            if ref is None:
                ref = out0
            else:
                assert np.allclose(out0, ref, rtol=1e-12), "backends disagree"
            print(f"{name:<28}{label:<10}{best:>10.3f}{uniforms.size / best:>14.3e}")
    if _core is not None:
        print("backends agree to 1e-12 relative on every output")


if __name__ == "__main__":
    main()
