"""Step-function empirical CDFs and their generalized inverses.

No interpolation: the CDF jumps by ``1/n`` at every observation (ties give
bigger jumps) and both inverses return observed sample values.
"""

from __future__ import annotations

import numpy as np

_Q_TOL = 1e-12


class _NegInfinity:
    """Marker for a sup-inverse that falls below the observed support."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NEG_INFINITY"

    def __reduce__(self):
        return (_NegInfinity, ())


NEG_INFINITY = _NegInfinity()


def _clamp_q(q):
    q = np.asarray(q, dtype=float)
    if np.any(q < -_Q_TOL) or np.any(q > 1 + _Q_TOL) or np.any(np.isnan(q)):
        raise ValueError("quantile levels must lie in [0, 1]")
    return np.clip(q, 0.0, 1.0)


class EmpiricalCdf:
    """Empirical distribution of a one-dimensional sample.

    Parameters
    ----------
    values : array_like
        Observations. Ties are kept, so repeated values produce larger jumps.
    """

    __slots__ = ("values", "n")

    def __init__(self, values, *, presorted: bool = False):
        v = np.array(values, dtype=float, copy=True).ravel()
        if v.size == 0:
            raise ValueError("EmpiricalCdf needs at least one observation")
        if not presorted:
            v.sort()
        v.setflags(write=False)
        self.values = v
        self.n = v.size

    def __repr__(self):
        return f"EmpiricalCdf(n={self.n}, min={self.values[0]:g}, max={self.values[-1]:g})"

    @property
    def min(self) -> float:
        return float(self.values[0])

    @property
    def max(self) -> float:
        return float(self.values[-1])

    def counts_le(self, y) -> np.ndarray:
        """Number of observations ``<= y`` (vectorized)."""
        return np.searchsorted(self.values, y, side="right")

    def cdf(self, y):
        """F(y) = #{values <= y} / n; right-continuous."""
        out = self.counts_le(y) / self.n
        return float(out) if np.ndim(out) == 0 else out

    def inf_index(self, q) -> np.ndarray:
        """Index of the smallest value with F >= q (q=0 gives index 0)."""
        q = _clamp_q(q)
        # k/n levels computed in floating point can overshoot by an ulp
        j = np.ceil(q * self.n - 1e-9 * np.maximum(1.0, q * self.n)).astype(np.int64)
        return np.clip(j, 1, self.n) - 1

    def inf_inverse(self, q):
        """Smallest observed y with F(y) >= q."""
        out = self.values[self.inf_index(q)]
        return float(out) if np.ndim(out) == 0 else out

    def sup_index(self, q) -> np.ndarray:
        """Index of the largest value with F <= q, or -1 when there is none."""
        q = _clamp_q(q)
        k = np.floor(q * self.n + 1e-9 * np.maximum(1.0, q * self.n)).astype(np.int64)
        k = np.clip(k, 0, self.n)
        out = np.full(k.shape, self.n - 1, dtype=np.int64)
        inner = k < self.n
        # largest value strictly below values[k]
        below = np.searchsorted(self.values, self.values[k[inner]], side="left")
        out[inner] = below - 1
        return out

    def sup_inverse(self, q):
        """Largest observed y with F(y) <= q; NEG_INFINITY if none exists.

        Scalar input returns a float or the marker; array input returns a
        masked array with the below-support entries masked.
        """
        idx = self.sup_index(q)
        if np.ndim(idx) == 0:
            i = int(idx)
            return NEG_INFINITY if i < 0 else float(self.values[i])
        vals = self.values[np.maximum(idx, 0)]
        return np.ma.masked_array(vals, mask=idx < 0)


def qq_index(source: EmpiricalCdf, target: EmpiricalCdf, y) -> np.ndarray:
    """Target index of ``target.inf_inverse(source.cdf(y))`` in exact integer arithmetic."""
    k = source.counts_le(y).astype(np.int64)
    j = -((-k * target.n) // source.n)  # ceil(k * n_t / n_s)
    return np.minimum(np.maximum(j, 1), target.n) - 1


def qq_map(source: EmpiricalCdf, target: EmpiricalCdf, y):
    """Rank-preserving map: the target value sitting at y's ECDF level in source."""
    out = target.values[qq_index(source, target, y)]
    return float(out) if np.ndim(out) == 0 else out


def outside_range(dist: EmpiricalCdf, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return (y < dist.values[0]) | (y > dist.values[-1])
