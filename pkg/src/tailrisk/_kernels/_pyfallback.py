"""Pure-numpy fallback for the compiled simulation kernels.

Matches the compiled semantics: same uniform stream in, severities computed
with the same formula, sums accumulated per segment.  Slower and hungrier on
memory (severities are materialised), but adequate when the extension is not
built.
"""

from __future__ import annotations

import numpy as np


def _segment_sums(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    offsets = np.zeros(counts.size, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    # sentinel keeps reduceat legal when the last segments are empty
    padded = np.concatenate([values, [0.0]])
    sums = np.add.reduceat(padded, offsets)
    sums[counts == 0] = 0.0
    return sums


def pot_compound_sums(uniforms, counts, mu, tau, threshold):
    uniforms = np.asarray(uniforms, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.int64)
    sev = threshold + mu * ((1.0 - uniforms) ** (-1.0 / tau) - 1.0)
    return _segment_sums(sev, counts)


def pot_compound_capped_sums(uniforms, counts, mu, tau, threshold, cap):
    uniforms = np.asarray(uniforms, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.int64)
    sev = threshold + mu * ((1.0 - uniforms) ** (-1.0 / tau) - 1.0)
    return _segment_sums(sev, counts), _segment_sums(np.minimum(sev, cap), counts)
