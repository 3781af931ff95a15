"""Dense complex linear algebra kernel.

Everything the equalizers need: Hermitian positive-definite solves,
full and truncated SVD, and small shape-checked helpers. All functions
are pure and operate on double-precision complex numpy arrays.

Matrix inverses are never formed explicitly; every ``inv(A) @ B``
expression in the equalizer math is realized as a Cholesky solve here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

HERM_TOL = 1e-10
RIDGE_EPS = 1e-12

# Near-singular sample covariances (N close to M) occasionally fail the
# first factorization; a single ridge retry is allowed. The counter lets
# callers notice when that path is being exercised.
_ridge_retries = 0


class NumericsError(ValueError):
    """Base class for numeric failures in the linear algebra kernel."""


class ShapeMismatch(NumericsError):
    pass


class NotHermitian(NumericsError):
    pass


class NotPositiveDefinite(NumericsError):
    pass


class RankOutOfRange(NumericsError):
    pass


def ridge_retry_count() -> int:
    """Number of HPD solves that needed the ridge fallback so far."""
    return _ridge_retries


def as_cmatrix(a) -> np.ndarray:
    """Coerce to a 2-D complex128 array and reject non-finite entries."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D array, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NumericsError("matrix contains NaN or Inf entries")
    return np.ascontiguousarray(m)


def conj_transpose(a: np.ndarray) -> np.ndarray:
    return np.asarray(a).conj().T


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^H)/2; removes floating-point drift from sample covariances."""
    a = np.asarray(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"hermitize needs a square matrix, got {a.shape}")
    return 0.5 * (a + a.conj().T)


def frob_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a), "fro"))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add {a.shape} and {b.shape}")
    return a + b


def scale(alpha: complex, a: np.ndarray) -> np.ndarray:
    return alpha * np.asarray(a)


def hpd_factor(a: np.ndarray):
    """Cholesky-factor a Hermitian positive-definite matrix.

    A is symmetrized before factorization. If the factorization fails, one
    ridge retry ``A + eps*tr(A)/n*I`` is attempted before raising
    :class:`NotPositiveDefinite`. The returned handle feeds
    :func:`hpd_factor_solve` and may be reused across many right-hand
    sides (e.g. one factorization per BCD block per realization).
    """
    global _ridge_retries
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ShapeMismatch(f"hpd_factor needs a square matrix, got {a.shape}")
    asym = frob_norm(a - a.conj().T)
    if asym > HERM_TOL * max(1.0, frob_norm(a)):
        raise NotHermitian(f"asymmetry {asym:.3e} beyond tolerance")
    ah = hermitize(a)
    try:
        return sla.cho_factor(ah, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        _ridge_retries += 1
        ridge = RIDGE_EPS * np.trace(ah).real / n
        warnings.warn(
            f"HPD factorization failed; retrying with ridge {ridge:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
        try:
            return sla.cho_factor(
                ah + ridge * np.eye(n), lower=True, check_finite=False
            )
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(
                "factorization pivot <= 0 even after ridge; "
                "degenerate covariance"
            ) from exc


def hpd_factor_solve(cf, b: np.ndarray) -> np.ndarray:
    """Solve A X = B from a factorization produced by :func:`hpd_factor`."""
    b = np.asarray(b, dtype=np.complex128)
    if b.shape[0] != cf[0].shape[0]:
        raise ShapeMismatch(f"rhs rows {b.shape[0]} != matrix size {cf[0].shape[0]}")
    return sla.cho_solve(cf, b, check_finite=False)


def hpd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for Hermitian positive-definite A via Cholesky."""
    return hpd_factor_solve(hpd_factor(a), b)


@dataclass(frozen=True)
class SvdResult:
    """Singular value decomposition X = U diag(S) V^H."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.conj().T


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Phase convention: first nonzero entry of each left singular vector
    # has nonnegative real part, so results are deterministic.
    u = u.copy()
    v = v.copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12 * max(1.0, np.abs(col).max()))
        if nz.size == 0:
            continue
        pivot = col[nz[0]]
        phase = pivot / abs(pivot)
        u[:, j] *= phase.conjugate()
        v[:, j] *= phase.conjugate()
    return u, v


def svd(x: np.ndarray) -> SvdResult:
    """Deterministic thin SVD with nonincreasing singular values."""
    x = as_cmatrix(x)
    u, s, vh = np.linalg.svd(x, full_matrices=False)
    u, v = _fix_signs(u, vh.conj().T)
    return SvdResult(U=u, S=s, V=v)


def truncated_svd(x: np.ndarray, r: int) -> SvdResult:
    """The r dominant singular triplets of x (Eckart-Young optimal)."""
    x = as_cmatrix(x)
    kmax = min(x.shape)
    if not 1 <= r <= kmax:
        raise RankOutOfRange(f"rank {r} not in [1, {kmax}] for shape {x.shape}")
    full = svd(x)
    return SvdResult(U=full.U[:, :r], S=full.S[:r], V=full.V[:, :r])
