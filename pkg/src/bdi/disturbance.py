"""Heteroscedastic disturbance model: a GP posterior over log injection variance.

The latent g is never integrated exactly; its variational posterior is
parameterized by a positive diagonal Lambda per action dimension:

    mu_g    = K_g (Lambda - I/2) 1 + mu_0 1
    Sigma_g = (K_g^-1 + Lambda)^-1

Effective noise H = exp(mu_g - diag(Sigma_g)/2) feeds the policy updates, and
the predictive exp(mu_g*) at a query sets the next injection level.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import chol_psd, chol_solve, rbf_matrix

LAMBDA_INIT = 0.5


def compute_q_g(gram_g, lam, mu0, full_cov=False):
    """Variational posterior of the log-variance functions.

    Parameters
    ----------
    gram_g : GramMatrix
        Disturbance-kernel Gram matrix on the training inputs.
    lam : ndarray, (N, D)
        Positive variational precisions, one column per action dim.
    mu0 : ndarray, (D,)
        Prior mean of each log-variance function.
    full_cov : bool
        Also return the full covariance per dim (used by gradients and tests).

    Returns
    -------
    mu_g : ndarray, (N, D)
    var_diag : ndarray, (N, D)
    cov : list of ndarray, optional
    """
    lam = np.asarray(lam, dtype=float)
    mu0 = np.asarray(mu0, dtype=float).ravel()
    if lam.ndim != 2:
        raise ValueError("lam must be (N, D)")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("lam entries must be positive and finite")
    if mu0.shape[0] != lam.shape[1]:
        raise ValueError("mu0 length must match the action dimension")
    K = gram_g.values
    n, d_act = lam.shape
    mu_g = np.empty((n, d_act))
    var_diag = np.empty((n, d_act))
    covs = []
    for d in range(d_act):
        mu_g[:, d] = K @ (lam[:, d] - 0.5) + mu0[d]
        s = np.sqrt(lam[:, d])
        A = np.eye(n) + (s[:, None] * K) * s[None, :]
        L, _ = chol_psd(A, 0.0, what="disturbance system")
        V = solve_triangular(L, s[:, None] * K, lower=True)
        var_diag[:, d] = np.diag(K) - np.einsum("ij,ij->j", V, V)
        if full_cov:
            covs.append(K - V.T @ V)
    np.clip(var_diag, 0.0, None, out=var_diag)
    if full_cov:
        return mu_g, var_diag, covs
    return mu_g, var_diag


def effective_noise(mu_g, var_diag):
    """Per-point effective noise H = exp(mu_g - var_diag / 2). Always positive."""
    return np.exp(mu_g - 0.5 * var_diag)


class DisturbanceModel:
    """Fitted disturbance posterior bound to its training inputs.

    Exposes the predictive log-variance moments at query states and the
    injection level exp(mu_g*) clamped at a ceiling.
    """

    def __init__(self, train_states, kernel, lam, mu0, ceiling):
        self.train_states = np.asarray(train_states, dtype=float)
        self.kernel = kernel
        self.lam = np.asarray(lam, dtype=float)
        self.mu0 = np.asarray(mu0, dtype=float).ravel()
        self.ceiling = float(ceiling)
        self._chols = None

    def _prediction_chols(self):
        # factor K_g + Lambda^-1 once per dim
        if self._chols is None:
            K = rbf_matrix(self.train_states, self.train_states, self.kernel)
            K = 0.5 * (K + K.T)
            np.fill_diagonal(K, 1.0 + self.kernel.jitter)
            self._chols = []
            for d in range(self.lam.shape[1]):
                A = K + np.diag(1.0 / self.lam[:, d])
                L, _ = chol_psd(A, 0.0, what="disturbance predictive system")
                self._chols.append(L)
        return self._chols

    def predict(self, query):
        """Predictive (mu_g*, var_g*) per action dim at one or more queries.

        Returns arrays of shape (Q, D).
        """
        query = np.atleast_2d(np.asarray(query, dtype=float))
        k_star = rbf_matrix(query, self.train_states, self.kernel)  # (Q, N)
        d_act = self.lam.shape[1]
        mu = np.empty((query.shape[0], d_act))
        var = np.empty((query.shape[0], d_act))
        chols = self._prediction_chols()
        for d in range(d_act):
            mu[:, d] = k_star @ (self.lam[:, d] - 0.5) + self.mu0[d]
            v = solve_triangular(chols[d], k_star.T, lower=True)
            var[:, d] = 1.0 - np.einsum("ij,ij->j", v, v)
        np.clip(var, 0.0, None, out=var)
        return mu, var

    def injection_level(self, query):
        """Next-iteration injection variance per dim, clamped at the ceiling.

        Only the predictive mean is needed, so this skips the variance solve.
        """
        query = np.atleast_2d(np.asarray(query, dtype=float))
        k_star = rbf_matrix(query, self.train_states, self.kernel)
        mu = k_star @ (self.lam - 0.5) + self.mu0
        return np.minimum(np.exp(mu), self.ceiling)


class ConstantDisturbance:
    """State-independent injection level (one variance per action dim)."""

    def __init__(self, level, ceiling):
        level = np.asarray(level, dtype=float).ravel()
        if np.any(level < 0):
            raise ValueError("injection level must be non-negative")
        self.level = np.minimum(level, ceiling)
        self.ceiling = float(ceiling)

    def injection_level(self, query):
        query = np.atleast_2d(np.asarray(query, dtype=float))
        return np.broadcast_to(self.level, (query.shape[0], self.level.size)).copy()


class NoDisturbance:
    """Zero injection (behavior-cloning collection and iteration one)."""

    def __init__(self, dim=2):
        self.dim = dim

    def injection_level(self, query):
        query = np.atleast_2d(np.asarray(query, dtype=float))
        return np.zeros((query.shape[0], self.dim))


def chol_solve_psd(A, b, what="system"):
    """Convenience dense solve used by test oracles."""
    L, _ = chol_psd(A, 0.0, what=what)
    return chol_solve(L, b)
