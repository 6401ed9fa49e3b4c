"""Evidence lower bound of the joint policy/disturbance model and its gradients.

The bound is evaluated in collapsed form: the per-component latent-function
posteriors are profiled out analytically, so for fixed responsibilities and
stick parameters the bound is a function of the hyperparameters alone

    theta = (log omega_f per component, log omega_g, mu_0, log Lambda).

Collapsed data-fit term per component m and action dim d, with
B = diag(r_:m / H_:d) and W = sqrt(B) on the active rows:

    T1 = -1/2 u^T A^-1 u - 1/2 log|A|,  A = I + W K_f W,  u = W a_d,

which equals log N(a_d | 0, K_f + B^-1) - 1/2 sum_n log(B_nn / 2 pi).
Gradients use the envelope theorem (the profiled posterior is optimal, so
only explicit dependences survive) plus

    dL/dLambda_d = (K_g + (Sigma_g o Sigma_g)/2) (g_h - lambda_d),

where g_h_n = sum_m r_nm / (2 H_nd) * ((a_nd - mu_nd^m)^2 + C_nn^{m,d}).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import betaln, digamma

from .kernels import chol_inverse_gram, chol_psd, tri_inv_lower
from .mixture import RESP_ACTIVE, stick_scores

LOG2PI = float(np.log(2.0 * np.pi))

# effective-noise clamp; only reachable in absurd corners of the search space
H_MIN, H_MAX = 1e-30, 1e30
MU_G_CLIP = 690.0


def beta_kl(a, b, prior_a, prior_b):
    """KL(Beta(a, b) || Beta(prior_a, prior_b)), elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return (
        betaln(prior_a, prior_b)
        - betaln(a, b)
        + (a - prior_a) * digamma(a)
        + (b - prior_b) * digamma(b)
        + (prior_a - a + prior_b - b) * digamma(a + b)
    )


def gauss_kl_generic(mu_q, cov_q, mu_p, cov_p):
    """KL(N(mu_q, cov_q) || N(mu_p, cov_p)) by dense factorization (oracle use)."""
    n = mu_q.shape[0]
    Lp, _ = chol_psd(cov_p, 0.0, what="prior covariance")
    Lq, _ = chol_psd(cov_q, 0.0, what="posterior covariance")
    sol = solve_triangular(Lp, cov_q, lower=True)
    sol = solve_triangular(Lp.T, sol, lower=False)
    tr = float(np.trace(sol))
    diff = mu_q - mu_p
    w = solve_triangular(Lp, diff, lower=True)
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(Lp))))
    logdet_q = 2.0 * float(np.sum(np.log(np.diag(Lq))))
    return 0.5 * (tr + float(w @ w) - n + logdet_p - logdet_q)


def sbp_terms(resp, stick_alpha, stick_beta, beta_prior):
    """Assignment and stick terms: E[log p(Z|v)] + H[q(Z)] - KL(q(v)||p(v))."""
    scores = stick_scores(stick_alpha, stick_beta)
    assign = float(resp.sum(axis=0) @ scores)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -float(np.sum(np.where(resp > 0, resp * np.log(resp), 0.0)))
    kl_v = float(np.sum(beta_kl(stick_alpha, stick_beta, 1.0, beta_prior)))
    return assign + ent - kl_v


class BoundProblem:
    """Bound evaluation context for fixed data, responsibilities and sticks.

    noise_mode "hetero" ties H to a log-variance GP posterior (parameters
    mu_0, log Lambda, log omega_g); "const" uses H = exp(mu_0) per action dim.
    """

    def __init__(self, states, actions, resp, stick_alpha, stick_beta, beta_prior,
                 jitter, noise_mode, sqdist=None, lengthscale_floor=0.0,
                 omega_f_trust=None):
        self.states = np.asarray(states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]
        self.actions = np.asarray(actions, dtype=float)
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        self.n, self.d_act = self.actions.shape
        self.resp = np.where(resp > RESP_ACTIVE, resp, 0.0)
        self.active = [np.flatnonzero(self.resp[:, m]) for m in range(resp.shape[1])]
        self.m_trunc = resp.shape[1]
        self.stick_alpha = stick_alpha
        self.stick_beta = stick_beta
        self.beta_prior = beta_prior
        self.jitter = jitter
        self.noise_mode = noise_mode
        self.sqdist = cdist(self.states, self.states, "sqeuclidean") \
            if sqdist is None else sqdist
        self.span = float(self.states.max() - self.states.min())
        self.lengthscale_floor = float(lengthscale_floor)
        self.omega_f_trust = omega_f_trust
        self.sbp_value = sbp_terms(self.resp, stick_alpha, stick_beta, beta_prior)

    def with_assignments(self, resp, stick_alpha, stick_beta):
        """Same data and settings under new responsibilities and sticks."""
        return BoundProblem(self.states, self.actions, resp, stick_alpha,
                            stick_beta, self.beta_prior, self.jitter,
                            self.noise_mode, sqdist=self.sqdist,
                            lengthscale_floor=self.lengthscale_floor,
                            omega_f_trust=self.omega_f_trust)

    def kernel_matrix(self, log_omega):
        K = np.exp(-self.sqdist / (2.0 * np.exp(2.0 * log_omega)))
        K[np.diag_indices_from(K)] += self.jitter
        return K

    def noise_block(self, params, want_grad_pieces=False):
        """Effective noise H plus the g-dependent bound terms.

        Returns (H, value, pieces); value collects -1/2 sum(mu_g) - KL_g and
        the -ND/2 log 2pi constant. pieces holds per-dim covariances and
        kernel when gradients are requested.
        """
        n, d_act = self.n, self.d_act
        value = -0.5 * n * d_act * LOG2PI
        if self.noise_mode == "const":
            mu0 = params["mu0"]
            H = np.broadcast_to(
                np.exp(np.clip(mu0, -MU_G_CLIP, MU_G_CLIP)), (n, d_act)
            ).copy()
            np.clip(H, H_MIN, H_MAX, out=H)
            value += -0.5 * n * float(np.sum(mu0))
            return H, value, {}
        mu0 = params["mu0"]
        lam = np.exp(params["log_lam"])
        Kg = self.kernel_matrix(params["log_omega_g"])
        H = np.empty((n, d_act))
        pieces = {"Kg": Kg, "lam": lam, "Sigma": [], "mu_g": np.empty((n, d_act))}
        for d in range(d_act):
            lam_d = lam[:, d]
            inv_lam = 1.0 / lam_d
            c = lam_d - 0.5
            mu_g = Kg @ c + mu0[d]
            # posterior covariance via (K + Lambda^-1): one factorization
            # gives the diagonal, the trace term and the log determinant
            M = Kg + np.diag(inv_lam)
            L, _ = chol_psd(M, 0.0, what="disturbance system")
            linv = tri_inv_lower(L)
            dinv = np.einsum("ij,ij->j", linv, linv)  # diag of M^-1
            var_diag = inv_lam - inv_lam**2 * dinv
            H[:, d] = np.exp(np.clip(mu_g - 0.5 * np.clip(var_diag, 0.0, None),
                                     -MU_G_CLIP, MU_G_CLIP))
            logdet = (float(np.sum(params["log_lam"][:, d]))
                      + 2.0 * float(np.sum(np.log(np.diag(L)))))
            tr_inv = float(np.sum(dinv * inv_lam))
            quad = float(c @ (mu_g - mu0[d]))
            kl_g = 0.5 * (logdet - n + tr_inv + quad)
            value += -0.5 * float(np.sum(mu_g)) - kl_g
            pieces["mu_g"][:, d] = mu_g
            if want_grad_pieces:
                minv = chol_inverse_gram(L, linv=linv)
                pieces["Sigma"].append(np.diag(inv_lam)
                                       - (inv_lam[:, None] * minv)
                                       * inv_lam[None, :])
        np.clip(H, H_MIN, H_MAX, out=H)
        return H, value, pieces

    def omega_f_per_component(self, params):
        """Per-component policy log lengthscales; a scalar entry is shared."""
        log_om = np.atleast_1d(np.asarray(params["log_omega_f"], dtype=float))
        if log_om.size == 1:
            return np.full(self.m_trunc, log_om[0])
        return log_om

    def evaluate(self, params, want_grad=False, want_omega_g_grad=False):
        """Bound value and (optionally) analytic gradients.

        params keys: "log_omega_f" (scalar shared across components or (M,)
        per component), "mu0" (D,), and for hetero mode "log_omega_g"
        (scalar), "log_lam" (N, D).

        Returns (value, grads) with grads keyed like params (None if
        want_grad is False). The omega_g gradient is only filled when
        requested; it costs two N x N products per action dim.
        """
        n, d_act = self.n, self.d_act
        a = self.actions
        hetero = self.noise_mode == "hetero"
        H, value, pieces = self.noise_block(params, want_grad_pieces=want_grad and hetero)
        value += self.sbp_value
        grads = None
        log_om_f = self.omega_f_per_component(params)
        g_h = np.zeros((n, d_act)) if want_grad else None
        grad_omega_f = np.zeros(self.m_trunc) if want_grad else None
        for m in range(self.m_trunc):
            idx = self.active[m]
            if idx.size == 0:
                continue
            sq_ss = self.sqdist[np.ix_(idx, idx)]
            om2 = np.exp(2.0 * log_om_f[m])
            K_ss = np.exp(-sq_ss / (2.0 * om2))
            K_ss[np.diag_indices_from(K_ss)] += self.jitter
            r_col = self.resp[idx, m]
            if want_grad:
                dK_ss = K_ss * (sq_ss / om2)
            for d in range(d_act):
                w = np.sqrt(r_col / H[idx, d])
                A = np.eye(idx.size) + (w[:, None] * K_ss) * w[None, :]
                L, _ = chol_psd(A, 0.0, what="component system")
                u = w * a[idx, d]
                z = solve_triangular(L, u, lower=True)
                value += -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(L))))
                if not want_grad:
                    continue
                # rows below the activity threshold contribute O(threshold)
                # to g_h and are dropped
                V = solve_triangular(L, w[:, None] * K_ss, lower=True)
                c_diag = np.clip(np.diag(K_ss) - np.einsum("ij,ij->j", V, V),
                                 0.0, None)
                t = w * solve_triangular(L.T, z, lower=False)
                mu_f = K_ss @ t
                g_h[idx, d] += (
                    r_col / (2.0 * H[idx, d]) * ((a[idx, d] - mu_f) ** 2 + c_diag)
                )
                ainv = chol_inverse_gram(L)
                quad = float(t @ (dK_ss @ t))
                trace = float(np.sum(((w[:, None] * ainv) * w[None, :]) * dK_ss))
                grad_omega_f[m] += 0.5 * (quad - trace)
        if not want_grad:
            return value, None
        if np.ndim(params["log_omega_f"]) == 0:
            grad_omega_f = float(np.sum(grad_omega_f))
        grads = {"log_omega_f": grad_omega_f, "mu0": g_h.sum(axis=0) - 0.5 * n}
        if hetero:
            lam = pieces["lam"]
            Kg = pieces["Kg"]
            grad_log_lam = np.empty((n, d_act))
            for d in range(d_act):
                diff = g_h[:, d] - lam[:, d]
                Sig = pieces["Sigma"][d]
                grad_lam = Kg @ diff + 0.5 * ((Sig * Sig) @ diff)
                grad_log_lam[:, d] = lam[:, d] * grad_lam
            grads["log_lam"] = grad_log_lam
            if want_omega_g_grad:
                omega_g = np.exp(params["log_omega_g"])
                dKg = Kg * (self.sqdist / omega_g**2)
                total = 0.0
                for d in range(d_act):
                    lam_d = lam[:, d]
                    c = lam_d - 0.5
                    P = np.eye(n) - lam_d[:, None] * pieces["Sigma"][d]
                    gh = g_h[:, d]
                    total += float((gh - 0.5) @ dKg @ c)
                    PG = P * gh[None, :]
                    total += -0.5 * float(np.sum((PG @ P.T) * dKg))
                    total += -0.5 * float(np.sum((P * lam_d[None, :]) * dKg))
                    total += 0.5 * float(np.sum((P @ P) * (dKg * lam_d[None, :])))
                    total += -0.5 * float(c @ dKg @ c)
                grads["log_omega_g"] = total
        return value, grads


def pack(params, names):
    return np.concatenate([np.atleast_1d(np.asarray(params[k], dtype=float)).ravel()
                           for k in names])


def unpack(x, template, names):
    out = dict(template)
    pos = 0
    for k in names:
        ref = np.atleast_1d(np.asarray(template[k]))
        size = ref.size
        val = x[pos:pos + size].reshape(np.asarray(template[k]).shape) \
            if np.asarray(template[k]).ndim > 0 else float(x[pos])
        out[k] = val
        pos += size
    return out


_BOUNDS = {
    "log_omega_f": (np.log(1e-4), np.log(1e6)),
    "log_omega_g": (np.log(1e-4), np.log(1e6)),
    "mu0": (np.log(1e-6), 5.0),
    "log_lam": (np.log(1e-6), np.log(1e5)),
}


def _param_bounds(problem, key):
    lo, hi = _BOUNDS[key]
    if key in ("log_omega_f", "log_omega_g"):
        # lengthscales far beyond the data span make a component's predictive
        # variance vanish everywhere, which breaks variance-based mode
        # selection; cap them at a few spans
        hi = min(hi, float(np.log(4.0 * max(problem.span, 1.0))))
        if problem.lengthscale_floor > 0.0:
            lo = max(lo, float(np.log(problem.lengthscale_floor)))
    if key == "log_omega_f" and problem.omega_f_trust is not None:
        lo = max(lo, problem.omega_f_trust[0])
        hi = min(hi, problem.omega_f_trust[1])
    return lo, hi


def maximize_bound(problem, params, names, max_iters=50, grad_tol=1e-10,
                   max_fun=None):
    """L-BFGS-B ascent of the bound over the parameter blocks in ``names``.

    Returns (params, value, improved, stationary). The incumbent is kept
    whenever the optimizer fails to improve on it, so the reported value
    never decreases. ``max_fun`` caps objective evaluations; partial ascent
    is fine since the outer loop alternates back to the posterior updates.
    """
    bounds = []
    for k in names:
        lo, hi = _param_bounds(problem, k)
        bounds.extend([(lo, hi)] * np.atleast_1d(np.asarray(params[k])).size)
    lo_b, hi_b = np.array(bounds).T
    x0 = np.clip(pack(params, names), lo_b, hi_b)
    params = unpack(x0, params, names)
    value0, grads0 = problem.evaluate(params, want_grad=True,
                                      want_omega_g_grad="log_omega_g" in names)
    g0 = pack(grads0, names)
    if np.max(np.abs(g0)) < grad_tol:
        return dict(params), value0, False, True

    def neg(x):
        p = unpack(x, params, names)
        v, g = problem.evaluate(p, want_grad=True,
                                want_omega_g_grad="log_omega_g" in names)
        if not np.isfinite(v):
            return 1e300, np.zeros_like(x)
        return -v, -pack(g, names)
    if max_fun is None:
        max_fun = 3 * max_iters + 20
    res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": max_iters, "maxfun": max_fun,
                            "ftol": 1e-13, "gtol": 1e-9})
    value1 = -float(res.fun)
    if np.isfinite(value1) and value1 > value0:
        return unpack(res.x, params, names), value1, True, False
    return dict(params), value0, False, False


def improve_scalar(problem, params, name, value, step=0.5, max_probes=12):
    """Greedy value-only refinement of one scalar parameter (used for omega_g).

    Probes plus/minus steps in log space, following improvement with step
    growth and shrinking otherwise. Monotone by construction.
    """
    best = dict(params)
    best_v = value
    probes = 0
    while probes < max_probes and step > 0.02:
        moved = False
        for sgn in (1.0, -1.0):
            cand = dict(best)
            cand[name] = best[name] + sgn * step
            lo, hi = _param_bounds(problem, name)
            cand[name] = float(np.clip(cand[name], lo, hi))
            v, _ = problem.evaluate(cand)
            probes += 1
            if v > best_v:
                best, best_v, moved = cand, v, True
                break
        if moved:
            step *= 1.6
        else:
            step *= 0.4
    return best, best_v


def optimize_lambda(problem, params, max_iters=50):
    """Ascend the bound in the variational precisions only.

    Returns (params, value, improved, stationary); input returned unchanged
    when already stationary (gradient below 1e-10) or on optimizer failure.
    """
    if problem.noise_mode != "hetero":
        raise ValueError("optimize_lambda requires the heteroscedastic noise mode")
    return maximize_bound(problem, params, ["log_lam"], max_iters=max_iters)
