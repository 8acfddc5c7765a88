import numpy as np
import pytest

from tailrisk._kernels import _pyfallback, backend

try:
    from tailrisk._kernels import _core
except ImportError:
    _core = None

needs_core = pytest.mark.skipif(_core is None, reason="compiled kernels not built")


def _panel(rng, n_sims=2000, lam=3.0):
    counts = rng.poisson(lam, size=n_sims).astype(np.int64)
    uniforms = rng.random(int(counts.sum()))
    return uniforms, counts


class TestFallbackSemantics:
    def test_zero_counts_give_zero(self, rng):
        counts = np.zeros(5, dtype=np.int64)
        out = _pyfallback.pot_compound_sums(np.empty(0), counts, 1.0, 2.0, 0.0)
        assert np.array_equal(out, np.zeros(5))

    def test_trailing_and_interior_zero_segments(self):
        counts = np.array([0, 2, 0, 1, 0], dtype=np.int64)
        u = np.array([0.5, 0.5, 0.75])
        # mu=1, tau=1: sev = 1/(1-u) - 1 -> 1, 1, 3
        out = _pyfallback.pot_compound_sums(u, counts, 1.0, 1.0, 0.0)
        assert np.allclose(out, [0.0, 2.0, 0.0, 3.0, 0.0])

    def test_threshold_added_per_event(self):
        counts = np.array([3], dtype=np.int64)
        u = np.array([0.0, 0.0, 0.0])  # severities all 0
        out = _pyfallback.pot_compound_sums(u, counts, 1.0, 1.0, 0.25)
        assert np.allclose(out, [0.75])

    def test_capped_sums(self):
        counts = np.array([2, 1], dtype=np.int64)
        u = np.array([0.5, 0.9, 0.99])  # mu=1,tau=1: sev = 1, 9, 99
        totals, covered = _pyfallback.pot_compound_capped_sums(u, counts, 1.0, 1.0, 0.0, 5.0)
        assert np.allclose(totals, [10.0, 99.0])
        assert np.allclose(covered, [6.0, 5.0])


@needs_core
class TestBackendAgreement:
    def test_sums_match_fallback(self, rng):
        u, counts = _panel(rng)
        a = _core.pot_compound_sums(u, counts, 0.8, 1.3, 0.1)
        b = _pyfallback.pot_compound_sums(u, counts, 0.8, 1.3, 0.1)
        assert np.allclose(a, b, rtol=1e-12, atol=0.0)

    def test_capped_match_fallback(self, rng):
        u, counts = _panel(rng, lam=5.0)
        at, ac = _core.pot_compound_capped_sums(u, counts, 1.2, 0.7, 0.05, 4.0)
        bt, bc = _pyfallback.pot_compound_capped_sums(u, counts, 1.2, 0.7, 0.05, 4.0)
        assert np.allclose(at, bt, rtol=1e-12, atol=0.0)
        assert np.allclose(ac, bc, rtol=1e-12, atol=0.0)

    def test_backend_reports_cython(self):
        assert backend() in {"cython", "python"}
