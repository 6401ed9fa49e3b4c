"""Variational posterior updates for the overlapping mixture-of-GPs policy.

One latent function per mixture component and action dimension, a single
assignment matrix shared across action dimensions, and truncated
stick-breaking weights. Responsibilities scale each component's effective
noise, so a component only pays factorization cost for the rows it owns:
responsibilities at or below ``RESP_ACTIVE`` are treated as exactly zero and
the solves run on the active subset.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import digamma

from .kernels import chol_psd

# responsibilities at or below this are treated as exact zeros
RESP_ACTIVE = 1e-12


class ComponentPosterior:
    """Gaussian posterior of one component's latent functions at the data.

    Attributes
    ----------
    mean : ndarray, (N, D)
        Posterior mean at the training inputs, one column per action dim.
    cov_diag : ndarray, (N, D)
        Posterior marginal variances at the training inputs.
    data_fit : float
        Collapsed likelihood term of this component, summed over action dims:
        log N(a_d | 0, K + B_d^-1) - 0.5 * sum_n log(B_d,nn / 2 pi).
    """

    __slots__ = ("mean", "cov_diag", "data_fit", "active", "chol", "root_b", "t")

    def __init__(self, mean, cov_diag, data_fit, active, chol, root_b, t):
        self.mean = mean
        self.cov_diag = cov_diag
        self.data_fit = data_fit
        # per action dim: active row indices, Cholesky of I + W K W on the
        # active subset, W = sqrt(B) there, and t = (K + B^-1)^-1 a restricted
        self.active = active
        self.chol = chol
        self.root_b = root_b
        self.t = t


def precision_diag(resp_col, eff_noise):
    """B diagonal for one component: responsibilities over effective noise.

    Entries with responsibility at or below ``RESP_ACTIVE`` come out exactly
    zero (the point does not load this component).
    """
    r = np.where(resp_col > RESP_ACTIVE, resp_col, 0.0)
    return r[:, None] / eff_noise


def update_q_f(gram_m, resp_col, eff_noise, actions):
    """Posterior moments of one component given responsibilities and noise.

    Parameters
    ----------
    gram_m : GramMatrix
        This component's kernel Gram matrix on the training inputs.
    resp_col : ndarray, (N,)
        This component's responsibility column.
    eff_noise : ndarray, (N, D)
        Effective per-point noise variances H, one column per action dim.
    actions : ndarray, (N, D)

    Returns
    -------
    ComponentPosterior
    """
    K = gram_m.values
    n, d_act = actions.shape
    b = precision_diag(resp_col, eff_noise)
    mean = np.zeros((n, d_act))
    cov_diag = np.empty((n, d_act))
    data_fit = 0.0
    active, chols, root_bs, ts = [], [], [], []
    for d in range(d_act):
        idx = np.flatnonzero(b[:, d] > 0.0)
        active.append(idx)
        if idx.size == 0:
            # empty component: prior returned unchanged
            cov_diag[:, d] = np.diag(K)
            chols.append(np.zeros((0, 0)))
            root_bs.append(np.zeros(0))
            ts.append(np.zeros(0))
            continue
        w = np.sqrt(b[idx, d])
        A = np.eye(idx.size) + (w[:, None] * K[np.ix_(idx, idx)]) * w[None, :]
        L, _ = chol_psd(A, 0.0, what="component system")
        V = solve_triangular(L, w[:, None] * K[idx, :], lower=True)
        cov_diag[:, d] = np.diag(K) - np.einsum("ij,ij->j", V, V)
        u = w * actions[idx, d]
        z = solve_triangular(L, u, lower=True)
        t = w * solve_triangular(L.T, z, lower=False)
        mean[:, d] = K[:, idx] @ t
        data_fit += -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(L))))
        chols.append(L)
        root_bs.append(w)
        ts.append(t)
    np.clip(cov_diag, 0.0, None, out=cov_diag)
    return ComponentPosterior(mean, cov_diag, data_fit, active, chols, root_bs, ts)


def stick_scores(stick_alpha, stick_beta):
    """Per-component expected log stick-breaking weights E[log pi_m]."""
    a = np.asarray(stick_alpha, dtype=float)
    b = np.asarray(stick_beta, dtype=float)
    own = digamma(a) - digamma(a + b)
    rest = digamma(b) - digamma(a + b)
    return own + np.concatenate(([0.0], np.cumsum(rest)[:-1]))


def update_q_z(actions, components, eff_noise, stick_alpha, stick_beta):
    """Responsibility matrix from component moments and stick parameters.

    log rho sums the per-action-dim data-fit terms, adds the expected log
    stick weight, and rows are normalized with log-sum-exp.

    Returns
    -------
    resp : ndarray, (N, M)
        Rows sum to one.
    """
    n, d_act = actions.shape
    m_trunc = len(components)
    log_rho = np.empty((n, m_trunc))
    const = -0.5 * np.sum(np.log(2.0 * np.pi * eff_noise), axis=1)
    for m, comp in enumerate(components):
        quad = np.sum(
            ((actions - comp.mean) ** 2 + comp.cov_diag) / (2.0 * eff_noise), axis=1
        )
        log_rho[:, m] = -quad + const
    log_rho += stick_scores(stick_alpha, stick_beta)[None, :]
    log_rho -= log_rho.max(axis=1, keepdims=True)
    rho = np.exp(log_rho)
    return rho / rho.sum(axis=1, keepdims=True)


def update_q_v(resp, beta_prior):
    """Stick-breaking Beta parameters from responsibility column masses.

    alpha_m = 1 + sum_n r_nm, beta_m = beta_prior + mass of later components;
    the last component's beta equals the prior exactly.
    """
    if beta_prior <= 0:
        raise ValueError(f"beta_prior must be positive, got {beta_prior}")
    mass = resp.sum(axis=0)
    later = np.concatenate((np.cumsum(mass[::-1])[-2::-1], [0.0]))
    return 1.0 + mass, beta_prior + later


def expected_stick_weights(stick_alpha, stick_beta):
    """Expected mixture weights E[pi_m] under the stick-breaking posterior."""
    a = np.asarray(stick_alpha, dtype=float)
    b = np.asarray(stick_beta, dtype=float)
    v = a / (a + b)
    remain = np.concatenate(([1.0], np.cumprod(1.0 - v)[:-1]))
    return v * remain


def select_mode(variances):
    """Index of the component with the smallest predictive variance.

    Ties break toward the lowest index.
    """
    variances = np.asarray(variances, dtype=float)
    if variances.size == 0:
        raise ValueError("select_mode: no components")
    if not np.all(np.isfinite(variances)):
        raise ValueError("select_mode: non-finite variances")
    return int(np.argmin(variances))


def effective_component_count(resp, mass_threshold=1.0):
    """Number of components whose total responsibility mass exceeds the threshold."""
    return int(np.sum(resp.sum(axis=0) > mass_threshold))


def init_responsibilities(n, m_trunc, rng):
    """Random symmetric-Dirichlet responsibilities to break component symmetry."""
    r = rng.dirichlet(np.ones(m_trunc), size=n)
    return np.asarray(r, dtype=float)
