"""Squared-exponential kernel, jittered Gram matrices and exact GP posteriors.

All positive-definite solves in the package go through the Cholesky helpers
here; explicit matrix inverses are reserved for test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, get_lapack_funcs, solve_triangular
from scipy.spatial.distance import cdist

JITTER_DEFAULT = 1e-8
JITTER_MAX = 1e-2


class NumericalError(RuntimeError):
    """A positive-definite factorization failed even after jitter escalation."""


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array of points, got shape {X.shape}")
    return X


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic squared-exponential kernel with unit output scale.

    Parameters
    ----------
    lengthscale : float
        Shared lengthscale for all input dimensions. Must be positive.
    jitter : float
        Starting value added to the Gram diagonal before factorization.
    """

    lengthscale: float
    jitter: float = JITTER_DEFAULT

    def __post_init__(self):
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be non-negative, got {self.jitter}")

    def with_lengthscale(self, lengthscale):
        return KernelSpec(lengthscale=float(lengthscale), jitter=self.jitter)


def rbf(x, y, spec):
    """Kernel value exp(-||x - y||^2 / (2 lengthscale^2)) for two points."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"point shapes differ: {x.shape} vs {y.shape}")
    d2 = float(np.sum((x - y) ** 2))
    return float(np.exp(-d2 / (2.0 * spec.lengthscale**2)))


def rbf_matrix(X, Y, spec):
    """Cross-covariance matrix between two point sets (rows are points)."""
    X = _as_2d(X)
    Y = _as_2d(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"point dims differ: {X.shape[1]} vs {Y.shape[1]}")
    d2 = cdist(X, Y, "sqeuclidean")
    return np.exp(-d2 / (2.0 * spec.lengthscale**2))


def chol_psd(A, jitter=0.0, max_jitter=JITTER_MAX, what="matrix"):
    """Lower Cholesky factor of a symmetric matrix, escalating jitter on failure.

    Starts from ``jitter`` on the diagonal and multiplies by 10 until the
    factorization succeeds or the cap is passed.

    Returns
    -------
    L : ndarray
        Lower-triangular factor of ``A + used_jitter * I``.
    used_jitter : float
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0)), jitter
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} contains non-finite entries")
    j = jitter
    while True:
        try:
            M = A if j == 0.0 else A + j * np.eye(n)
            return cholesky(M, lower=True), j
        except np.linalg.LinAlgError:
            pass
        except Exception:
            pass
        j = max(j, 1e-10) * 10.0 if j > 0 else 1e-10
        if j > max_jitter:
            raise NumericalError(
                f"{what} is not positive definite (jitter escalated past {max_jitter})"
            )


def chol_solve(L, b):
    """Solve (L L^T) x = b given a lower Cholesky factor."""
    y = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, y, lower=False)


def tri_inv_lower(L):
    """Inverse of a lower-triangular matrix via LAPACK trtri."""
    trtri, = get_lapack_funcs(("trtri",), (L,))
    inv, info = trtri(L, lower=1)
    if info != 0:
        raise NumericalError(f"triangular inversion failed (info={info})")
    return inv


def chol_inverse_gram(L, linv=None):
    """(L L^T)^-1 as a full symmetric matrix, via trtri + lauum.

    Cheaper than two triangular solves against the identity. Pass ``linv``
    when the triangular inverse is already available.
    """
    if linv is None:
        linv = tri_inv_lower(L)
    lauum, = get_lapack_funcs(("lauum",), (linv,))
    g, info = lauum(linv, lower=1)
    if info != 0:
        raise NumericalError(f"triangular product failed (info={info})")
    # lauum writes only the lower triangle of Linv^T Linv
    return np.tril(g) + np.tril(g, -1).T


class GramMatrix:
    """Kernel Gram matrix with jitter on the diagonal and a cached factorization.

    Attributes
    ----------
    values : ndarray, (N, N)
        Kernel matrix plus ``jitter * I``. Symmetric positive definite.
    jitter : float
        Jitter actually used (escalated from the spec value if needed).
    """

    def __init__(self, values, jitter, chol=None):
        self.values = values
        self.jitter = jitter
        self._chol = chol

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def chol(self):
        if self._chol is None:
            self._chol, _ = chol_psd(self.values, 0.0, what="gram matrix")
        return self._chol

    def solve(self, b):
        return chol_solve(self.chol, b)

    @property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def gram(X, spec):
    """Build the Gram matrix of a point set under ``spec``.

    The kernel diagonal is exactly 1 before jitter; the stored diagonal is
    ``1 + jitter`` with jitter escalated tenfold (cap 1e-2) until the Cholesky
    factorization succeeds.
    """
    X = _as_2d(X)
    if X.shape[0] == 0:
        raise ValueError("gram called with an empty point set")
    K0 = rbf_matrix(X, X, spec)
    # exact symmetry and exact unit diagonal regardless of cdist rounding
    K0 = 0.5 * (K0 + K0.T)
    np.fill_diagonal(K0, 1.0)
    j = spec.jitter if spec.jitter > 0 else JITTER_DEFAULT
    L, used = chol_psd(K0, j, what="gram matrix")
    K = K0 + used * np.eye(K0.shape[0])
    return GramMatrix(K, used, chol=L)


def gp_posterior(gram_matrix, noise_diag, targets, k_star, k_star_star):
    """Exact GP posterior mean and variance at one query point.

    Parameters
    ----------
    gram_matrix : GramMatrix
        Training Gram matrix K (jitter included).
    noise_diag : ndarray, (N,)
        Per-point observation noise variances added to the diagonal.
    targets : ndarray, (N,)
    k_star : ndarray, (N,)
        Kernel vector between the query and the training points.
    k_star_star : float
        Prior variance at the query.

    Returns
    -------
    mean, var : float
        ``var`` is clamped at zero from below.
    """
    K = gram_matrix.values
    noise_diag = np.asarray(noise_diag, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    k_star = np.asarray(k_star, dtype=float).ravel()
    if not (K.shape[0] == noise_diag.shape[0] == targets.shape[0] == k_star.shape[0]):
        raise ValueError("gp_posterior: inconsistent shapes")
    if np.any(noise_diag < 0):
        raise ValueError("gp_posterior: negative noise variance")
    A = K + np.diag(noise_diag)
    L, _ = chol_psd(A, 0.0, what="gp system")
    alpha = chol_solve(L, targets)
    v = solve_triangular(L, k_star, lower=True)
    mean = float(k_star @ alpha)
    var = float(k_star_star - v @ v)
    return mean, max(var, 0.0)
