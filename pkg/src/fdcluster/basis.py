"""Cubic B-spline systems, design matrices, and per-series least-squares filtering.

Stage 1 of the pipeline: every observed series is projected onto a shared
clamped cubic B-spline basis by ordinary least squares, reducing each
length-m series to a d-dimensional coefficient vector. The basis is
evaluated with the Cox-de Boor recursion; the Gram matrix of the shared
design is factorized once and reused across all series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

ORDER = 4  # cubic splines throughout

# Relative eigenvalue cutoff below which the Gram matrix is treated as
# singular and the minimum-norm (pseudoinverse) path is used instead.
GRAM_RCOND = 1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Ordered sample times t_1 < ... < t_m inside the domain [t_lo, t_hi]."""

    points: np.ndarray
    t_lo: float
    t_hi: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 1:
            raise ValueError("grid needs at least one point")
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if pts[0] < self.t_lo or pts[-1] > self.t_hi:
            raise ValueError("grid points fall outside the domain")

    @classmethod
    def uniform(cls, t_lo: float, t_hi: float, m: int) -> "TimeGrid":
        if m < 1:
            raise ValueError("m must be positive")
        if m == 1:
            pts = np.array([t_lo], dtype=float)
        else:
            pts = np.linspace(t_lo, t_hi, m)
        return cls(points=pts, t_lo=float(t_lo), t_hi=float(t_hi))

    @property
    def m(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class BasisSystem:
    """Clamped cubic B-spline system with d basis functions on [t_lo, t_hi].

    The d-2 breakpoints are equally spaced and include both endpoints;
    boundary knots are repeated to the spline order so the basis
    interpolates at the domain ends.
    """

    t_lo: float
    t_hi: float
    d: int
    breakpoints: np.ndarray
    knots: np.ndarray
    order: int = ORDER


def make_bspline_system(domain, d: int) -> BasisSystem:
    """Build the cubic B-spline system with d basis functions over `domain`.

    Parameters
    ----------
    domain : (t_lo, t_hi) pair with t_lo < t_hi.
    d : number of basis functions, at least 4. The system has d-2 equally
        spaced breakpoints spanning the domain inclusive of both endpoints.
    """
    t_lo, t_hi = float(domain[0]), float(domain[1])
    if not t_lo < t_hi:
        raise ValueError(f"degenerate domain [{t_lo}, {t_hi}]")
    if d < ORDER:
        raise ValueError(f"need at least {ORDER} basis functions, got {d}")
    breakpoints = np.linspace(t_lo, t_hi, d - 2)
    knots = np.concatenate([
        np.full(ORDER, t_lo),
        breakpoints[1:-1],
        np.full(ORDER, t_hi),
    ])
    return BasisSystem(t_lo=t_lo, t_hi=t_hi, d=d,
                       breakpoints=breakpoints, knots=knots)


def _basis_columns(system: BasisSystem, t: np.ndarray):
    """Nonzero basis values at each t: (spans, values) with values[j] the
    ORDER entries for basis indices spans[j]-3 .. spans[j].

    Vectorized Cox-de Boor recursion over all evaluation points.
    """
    knots = system.knots
    d = system.d
    if np.any(t < system.t_lo) or np.any(t > system.t_hi):
        raise ValueError("evaluation point outside the basis domain")

    spans = np.searchsorted(knots, t, side="right") - 1
    np.clip(spans, ORDER - 1, d - 1, out=spans)

    npts = t.size
    values = np.zeros((npts, ORDER))
    left = np.zeros((npts, ORDER))
    right = np.zeros((npts, ORDER))
    values[:, 0] = 1.0
    for r in range(1, ORDER):
        left[:, r] = t - knots[spans + 1 - r]
        right[:, r] = knots[spans + r] - t
        saved = np.zeros(npts)
        for i in range(r):
            denom = right[:, i + 1] + left[:, r - i]
            temp = values[:, i] / denom
            values[:, i] = saved + right[:, i + 1] * temp
            saved = left[:, r - i] * temp
        values[:, r] = saved
    return spans, values


def evaluate_basis(system: BasisSystem, t) -> np.ndarray:
    """Evaluate all d basis functions at scalar time t.

    Returns a d-vector with at most ORDER nonzero entries; entries are
    nonnegative and sum to one.
    """
    tarr = np.atleast_1d(np.asarray(t, dtype=float))
    spans, values = _basis_columns(system, tarr)
    out = np.zeros((tarr.size, system.d))
    cols = spans[:, None] + np.arange(-(ORDER - 1), 1)[None, :]
    np.put_along_axis(out, cols, values, axis=1)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return out[0]
    return out


@dataclass(frozen=True)
class DesignMatrix:
    """Basis evaluations at the m grid points, with its Gram factorization.

    `solve_normal(rhs)` applies (X^T X)^{-1} (Cholesky) or (X^T X)^+
    (pseudoinverse) depending on the conditioning found at construction.
    """

    matrix: np.ndarray          # m x d
    gram: np.ndarray            # d x d
    singular: bool
    _cho: tuple = field(repr=False, default=None)
    _pinv: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> "DesignMatrix":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("design matrix must be 2-D")
        gram = X.T @ X
        eigvals = np.linalg.eigvalsh(gram)
        largest = eigvals[-1]
        singular = largest <= 0 or eigvals[0] <= GRAM_RCOND * largest
        if singular:
            pinv = np.linalg.pinv(gram, rcond=GRAM_RCOND)
            return cls(matrix=X, gram=gram, singular=True, _pinv=pinv)
        cho = cho_factor(gram)
        return cls(matrix=X, gram=gram, singular=False, _cho=cho)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def solve_normal(self, rhs: np.ndarray) -> np.ndarray:
        if self.singular:
            return self._pinv @ rhs
        return cho_solve(self._cho, rhs)


def design_matrix(system: BasisSystem, grid: TimeGrid) -> DesignMatrix:
    """Evaluate the basis at every grid point and factorize the Gram matrix.

    The factorization is computed once per grid and shared by all series
    fitted against it.
    """
    spans, values = _basis_columns(system, grid.points)
    X = np.zeros((grid.m, system.d))
    cols = spans[:, None] + np.arange(-(ORDER - 1), 1)[None, :]
    np.put_along_axis(X, cols, values, axis=1)
    return DesignMatrix.from_matrix(X)


def ols_fit(design: DesignMatrix, z: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of one series (or a stack of series).

    For a well-conditioned Gram matrix this is (X^T X)^{-1} X^T z; when the
    Gram matrix is numerically singular the Moore-Penrose solution
    (X^T X)^+ X^T z is returned instead, which is the minimum-norm
    least-squares solution. Accepts a length-m vector or an (n, m) matrix
    of series; returns (d,) or (n, d) accordingly.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != design.m:
        raise ValueError(f"series length {Z.shape[1]} != design rows {design.m}")
    rhs = design.matrix.T @ Z.T          # d x n
    coefs = design.solve_normal(rhs).T   # n x d
    return coefs[0] if single else coefs


def detrend(series: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Residuals of the per-series least-squares fit on (1, t).

    Output has zero mean and zero correlation with t. Accepts one series
    or an (n, m) stack sharing the grid.
    """
    t = grid.points
    if t.size < 2:
        raise ValueError("detrending needs at least two time points")
    tc = t - t.mean()
    stt = float(tc @ tc)
    if stt == 0.0:
        raise ValueError("constant grid: zero time variance")
    z = np.asarray(series, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[1] != t.size:
        raise ValueError("series length does not match the grid")
    slope = (Z @ tc) / stt                      # (n,)
    resid = Z - Z.mean(axis=1, keepdims=True) - slope[:, None] * tc[None, :]
    return resid[0] if single else resid


def reconstruct(system: BasisSystem, b: np.ndarray, t) -> float | np.ndarray:
    """Curve value b^T x(t) at time t (scalar or array of times)."""
    b = np.asarray(b, dtype=float)
    phi = evaluate_basis(system, t)
    return phi @ b


@dataclass
class CoefSet:
    """n x d matrix of per-series basis coefficients plus normalization state.

    `col_means`/`col_sds` are the statistics used to z-score each column,
    or None when the coefficients are raw. Zero-variance columns are
    recorded with scale 1 so de-normalization is always well defined.
    """

    values: np.ndarray
    col_means: np.ndarray | None = None
    col_sds: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ValueError("coefficients must form an n x d matrix")
        if not np.all(np.isfinite(vals)):
            raise ValueError("coefficients contain non-finite values")
        self.values = vals

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def normalized(self) -> bool:
        return self.col_means is not None


def coef_values(B) -> np.ndarray:
    """Accept a CoefSet or a plain (n, d) array and return the array."""
    if isinstance(B, CoefSet):
        return B.values
    arr = np.asarray(B, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected an n x d coefficient matrix")
    return arr


def filter_series(design: DesignMatrix, Z: np.ndarray) -> CoefSet:
    """Stage-1 filter: OLS coefficients for every series against one design."""
    return CoefSet(values=ols_fit(design, np.atleast_2d(np.asarray(Z, float))))
