"""Natural cubic splines with the exact curvature penalty.

A smooth time effect is parameterised by its values at the knots (the unique
observation times).  The Green-Silverman band matrices give the exact
``integral of h''(t)^2`` Gram matrix; its positive eigenpairs form a basis of
the nonlinear part of the spline (the constant and linear directions span the
null space and live in the parametric design), scaled so the penalty on the
basis coefficients is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["curvature_penalty", "SplineBasis", "build_spline_basis"]


def curvature_penalty(knots: np.ndarray) -> np.ndarray:
    """Gram matrix K with ``g' K g = integral h''(t)^2 dt`` for the natural
    cubic spline interpolating values ``g`` at ``knots``."""
    t = np.asarray(knots, dtype=float)
    if t.ndim != 1 or t.size < 3:
        raise DomainError("curvature penalty needs at least 3 distinct knots")
    if np.any(np.diff(t) <= 0):
        raise DomainError("knots must be strictly increasing")
    n = t.size
    h = np.diff(t)
    delta = np.zeros((n - 2, n))
    for i in range(n - 2):
        delta[i, i] = 1.0 / h[i]
        delta[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        delta[i, i + 2] = 1.0 / h[i + 1]
    w = np.zeros((n - 2, n - 2))
    for i in range(n - 2):
        w[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < n - 2:
            w[i, i + 1] = w[i + 1, i] = h[i + 1] / 6.0
    return delta.T @ np.linalg.solve(w, delta)


@dataclass(frozen=True)
class SplineBasis:
    """Nonlinear spline directions at the knots, penalty-normalised.

    ``columns[j]`` holds the basis value at ``knots[j]``; the curvature
    penalty of a coefficient vector ``b`` is exactly ``b @ b``.
    """

    knots: np.ndarray
    columns: np.ndarray  # (n_knots, n_basis)

    @property
    def n_basis(self) -> int:
        return self.columns.shape[1]

    def values_at(self, times: np.ndarray) -> np.ndarray:
        """Basis values at arbitrary times via natural-spline interpolation."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, self.n_basis))
        for j in range(self.n_basis):
            out[:, j] = _ncs_interpolate(self.knots, self.columns[:, j], times)
        return out


def build_spline_basis(knots: np.ndarray) -> SplineBasis:
    knots = np.asarray(knots, dtype=float)
    K = curvature_penalty(knots)
    eigvals, eigvecs = np.linalg.eigh(K)
    scale = float(eigvals.max())
    keep = eigvals > 1e-10 * scale
    # dividing by sqrt(eigenvalue) turns the penalty into the identity
    cols = eigvecs[:, keep] / np.sqrt(eigvals[keep])
    return SplineBasis(knots=knots, columns=cols)


def _ncs_interpolate(knots: np.ndarray, g: np.ndarray, t_new: np.ndarray) -> np.ndarray:
    """Evaluate the natural cubic spline through ``(knots, g)`` at ``t_new``.

    Natural boundary conditions: zero second derivative at the end knots and
    linear extrapolation beyond them.
    """
    n = knots.size
    h = np.diff(knots)
    # second derivatives at interior knots: W gamma = Delta g
    delta_g = np.empty(n - 2)
    for i in range(n - 2):
        delta_g[i] = (g[i] / h[i]) - g[i + 1] * (1.0 / h[i] + 1.0 / h[i + 1]) + g[i + 2] / h[i + 1]
    w = np.zeros((n - 2, n - 2))
    for i in range(n - 2):
        w[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < n - 2:
            w[i, i + 1] = w[i + 1, i] = h[i + 1] / 6.0
    gamma = np.zeros(n)
    gamma[1:-1] = np.linalg.solve(w, delta_g)

    out = np.empty_like(t_new, dtype=float)
    idx = np.clip(np.searchsorted(knots, t_new, side="right") - 1, 0, n - 2)
    for pos, (t, i) in enumerate(zip(t_new, idx)):
        if t <= knots[0]:
            # natural spline: linear extrapolation with the boundary slope
            slope = (g[1] - g[0]) / h[0] - h[0] * gamma[1] / 6.0
            out[pos] = g[0] + slope * (t - knots[0])
        elif t >= knots[-1]:
            slope = (g[-1] - g[-2]) / h[-1] + h[-1] * gamma[-2] / 6.0
            out[pos] = g[-1] + slope * (t - knots[-1])
        else:
            hi = h[i]
            a = (knots[i + 1] - t) / hi
            b = (t - knots[i]) / hi
            out[pos] = (
                a * g[i]
                + b * g[i + 1]
                + ((a**3 - a) * gamma[i] + (b**3 - b) * gamma[i + 1]) * hi * hi / 6.0
            )
    return out
