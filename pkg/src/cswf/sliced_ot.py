"""One-dimensional optimal transport on empirical distributions.

An empirical CDF is a sorted array ``z[0] <= ... <= z[n-1]``.  The CDF is the
piecewise-linear interpolation through the knots ``(z[k], k / n)``, clamped to
0 below the support and to 1 at and above ``z[n-1]``.  The quantile function is
its inverse: ``I = floor(a * n)``, ``Q(a) = z[I] + (a * n - I) * (z[I+1] - z[I])``.
With this pairing ``Q(F(z)) == z`` inside the support, and for two equal-size
samples the transport map ``Q_q o F_p`` sends the k-th smallest point of ``p``
to the k-th smallest point of ``q``.

Everything here works on float64.  The underscore helpers operate row-wise on
2-D stacks of sorted arrays and are what the flow simulation calls; the public
functions are thin scalar/1-D wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

_SNAP = 4 * np.finfo(np.float64).eps

__all__ = [
    "EmpiricalCDF",
    "PotentialDerivative",
    "build_cdf",
    "cdf_eval",
    "quantile_eval",
    "potential_derivative",
    "one_d_transport",
    "sw2_distance",
]


@dataclass(frozen=True)
class EmpiricalCDF:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise InvalidArgument("EmpiricalCDF needs a nonempty 1-D array")
        if np.any(v[1:] < v[:-1]):
            raise InvalidArgument("EmpiricalCDF values must be sorted non-decreasing")
        v = v.copy() if v is self.values else v
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def count(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class PotentialDerivative:
    """Derivative of the Kantorovich potential from ``source`` onto ``target``."""

    source: EmpiricalCDF
    target: EmpiricalCDF

    def __call__(self, z):
        return potential_derivative(self, z)


def build_cdf(samples) -> EmpiricalCDF:
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size == 0:
        raise InvalidArgument("cannot build a CDF from an empty sample")
    if not np.all(np.isfinite(s)):
        raise InvalidArgument("CDF samples must be finite (got NaN or inf)")
    # stable so equal keys keep input order; the sorted values do not depend on it
    return EmpiricalCDF(np.sort(s, kind="stable"))


# ---------------------------------------------------------------------------
# row-wise kernels
# ---------------------------------------------------------------------------

def _insert_positions(sorted_rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Number of knots ``<= z`` per query (``searchsorted(..., side="right")``)."""
    if sorted_rows.ndim == 1:
        return np.searchsorted(sorted_rows, z, side="right")
    out = np.empty(z.shape, dtype=np.intp)
    for r in range(sorted_rows.shape[0]):
        out[r] = np.searchsorted(sorted_rows[r], z[r], side="right")
    return out


def _self_positions(sorted_rows: np.ndarray) -> np.ndarray:
    """Insert positions of each knot into its own sorted row.

    Equal to ``_insert_positions(s, s)`` but without the binary searches: a
    knot's position is one past the last index of its run of equal values.
    """
    n = sorted_rows.shape[-1]
    idx = np.arange(n)
    run_end = np.ones(sorted_rows.shape, dtype=bool)
    run_end[..., :-1] = sorted_rows[..., 1:] != sorted_rows[..., :-1]
    if run_end.all():  # no ties, the common case for continuous data
        return np.broadcast_to(idx + 1, sorted_rows.shape).copy()
    last = np.where(run_end, idx, n)
    last = np.flip(np.minimum.accumulate(np.flip(last, -1), axis=-1), -1)
    return last + 1


def _gather(rows: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Row-wise ``rows[r, idx[r, ...]]``; much faster than take_along_axis."""
    if rows.ndim == 1:
        return rows[idx]
    n = rows.shape[-1]
    offsets = (np.arange(rows.shape[0]) * n).reshape((-1,) + (1,) * (idx.ndim - 1))
    return np.take(rows.reshape(-1), idx + offsets)


def _cdf_from_positions(sorted_rows: np.ndarray, pos: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = sorted_rows.shape[-1]
    lo_i = np.clip(pos - 1, 0, n - 1)
    hi_i = np.clip(pos, 0, n - 1)
    lo = _gather(sorted_rows, lo_i)
    hi = _gather(sorted_rows, hi_i)
    gap = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(gap > 0, (z - lo) / np.where(gap > 0, gap, 1.0), 0.0)
    f = (pos - 1) / n + frac / n
    f = np.where(pos <= 0, 0.0, f)
    return np.where(pos >= n, 1.0, f)


def _quantile_rows(sorted_rows: np.ndarray, a: np.ndarray) -> np.ndarray:
    if a.ndim == 0:
        return _quantile_rows(sorted_rows, a.reshape(1)).reshape(())
    n = sorted_rows.shape[-1]
    t = a * n
    # (k / n) * n can land an ulp below k; snap so knots map to themselves
    r = np.rint(t)
    near = np.abs(t - r) <= _SNAP * r
    t[near] = r[near]
    i = np.floor(t).astype(np.intp)
    np.clip(i, 0, n - 1, out=i)
    j = np.minimum(i + 1, n - 1)
    if sorted_rows.ndim == 2 and a.ndim == 1:
        # one set of levels shared by every row
        lo, hi = sorted_rows[:, i], sorted_rows[:, j]
    else:
        lo, hi = _gather(sorted_rows, i), _gather(sorted_rows, j)
    frac = t - i
    frac[j == i] = 0.0
    hi -= lo
    hi *= frac
    return lo + hi


def _self_cdf(sorted_rows: np.ndarray) -> np.ndarray:
    """CDF of each knot of a sorted row under its own row.

    A knot sits on a run of equal values, so its CDF is ``last / n`` with
    ``last`` the run's final index (exactly 1 for the maximum).  This is the
    same float ``_cdf_from_positions`` returns for these queries.  Without
    ties the result is 1-D and shared by all rows.
    """
    n = sorted_rows.shape[-1]
    if sorted_rows.ndim == 2 and np.all(sorted_rows[:, 1:] != sorted_rows[:, :-1]):
        # no ties: the same row of levels for every projection
        last = np.arange(n)
    else:
        last = _self_positions(sorted_rows) - 1
    return np.where(last + 1 >= n, 1.0, last / n + 0.0 / n)


def _potential_rows(source_rows, target_rows, z, pos=None):
    """``z - Q_target(F_source(z))`` row-wise; ``pos`` skips the binary search."""
    if pos is None:
        pos = _insert_positions(source_rows, z)
    f = _cdf_from_positions(source_rows, pos, z)
    return z - _quantile_rows(target_rows, f)


# ---------------------------------------------------------------------------
# public scalar / 1-D API
# ---------------------------------------------------------------------------

def _as_query(z, what):
    arr = np.asarray(z, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise InvalidArgument(f"{what} must not be NaN")
    return arr


def _unwrap(out, like):
    return float(out) if np.ndim(like) == 0 else out


def cdf_eval(cdf: EmpiricalCDF, z):
    """Evaluate the interpolated CDF at ``z`` (scalar or array)."""
    zq = _as_query(z, "z")
    pos = _insert_positions(cdf.values, zq)
    return _unwrap(_cdf_from_positions(cdf.values, np.asarray(pos), zq), z)


def quantile_eval(cdf: EmpiricalCDF, a):
    aq = _as_query(a, "a")
    if np.any((aq < 0.0) | (aq > 1.0)):
        raise InvalidArgument("quantile level must lie in [0, 1]")
    return _unwrap(_quantile_rows(cdf.values, aq), a)


def potential_derivative(pd: PotentialDerivative, z):
    zq = _as_query(z, "z")
    return _unwrap(_potential_rows(pd.source.values, pd.target.values, zq), z)


def one_d_transport(p: EmpiricalCDF, q: EmpiricalCDF, z):
    """Closed-form monotone transport ``Q_q(F_p(z))``."""
    zq = _as_query(z, "z")
    return _unwrap(quantile_eval(q, cdf_eval(p, zq)), z)


def _unit_directions(dim: int, count: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((count, dim))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    return theta


def _step_quantiles(sorted_rows, levels):
    n = sorted_rows.shape[-1]
    idx = np.minimum((levels * n).astype(np.intp), n - 1)
    return sorted_rows[..., idx]


def sw2_from_directions(a: np.ndarray, b: np.ndarray, theta: np.ndarray) -> float:
    """Sliced W2 with the given (K, d) unit directions."""
    pa = np.sort(theta @ a.T, axis=1)
    pb = np.sort(theta @ b.T, axis=1)
    q = max(pa.shape[1], pb.shape[1])
    levels = (np.arange(q) + 0.5) / q
    diff = _step_quantiles(pa, levels) - _step_quantiles(pb, levels)
    return float(np.sqrt(np.mean(diff * diff)))


def sw2_distance(a, b, num_projections: int, seed=0) -> float:
    """Monte-Carlo sliced 2-Wasserstein distance between two point clouds.

    Parameters
    ----------
    a, b : array-like, shape (n, d) and (m, d)
        Samples; 1-D input is treated as ``d = 1``.
    num_projections : int
        Number of uniform directions on the sphere.
    seed : int
        Seed for the directions.  Both clouds are projected on the same draws,
        so the estimate is symmetric in ``(a, b)``.

    Returns
    -------
    float
        Square root of the mean over directions of the 1-D squared W2, each
        computed on the midpoint quantile grid of size ``max(n, m)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise InvalidArgument(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InvalidArgument("sample sets must be nonempty")
    if num_projections < 1:
        raise InvalidArgument("num_projections must be positive")
    theta = _unit_directions(a.shape[1], num_projections, seed)
    return sw2_from_directions(a, b, theta)
