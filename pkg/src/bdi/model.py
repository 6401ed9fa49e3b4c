"""Deployable mixture-of-GPs policy with optional learned disturbance model.

A fitted policy carries the training inputs, per-component responsibility
weighted GP predictors and the noise model parameters.  Prediction selects
the mixture component with the smallest total predictive variance at the
query point and returns that component's posterior mean.
"""

import json

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .disturbance import DisturbanceModel
from .kernels import GramMatrix, KernelSpec
from .mixture import update_q_f

FORMAT_TAG = "bdi-policy-1"


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


class MixturePolicy:
    """Mixture-of-GPs action predictor built from a variational fit."""

    def __init__(self, states, actions, resp, eff_noise, params, noise_mode,
                 jitter=1e-8, ceiling=None):
        self.states = _as_2d(states)
        self.actions = _as_2d(actions)
        self.resp = np.asarray(resp, dtype=float)
        self.eff_noise = np.asarray(eff_noise, dtype=float)
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}
        self.noise_mode = noise_mode
        self.jitter = float(jitter)
        self.ceiling = None if ceiling is None else float(ceiling)
        if noise_mode not in ("hetero", "const"):
            raise ValueError("noise_mode must be 'hetero' or 'const'")
        self.n_components = self.resp.shape[1]
        self.dim = self.actions.shape[1]
        self._comps = None
        self._noise_model = None
        self._sqdist = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_state(cls, state, ceiling=None):
        """Build a policy from a converged ``FitState``."""
        return cls(state.states, state.actions, state.resp, state.eff_noise,
                   state.params, state.config.noise_mode,
                   jitter=state.config.jitter, ceiling=ceiling)

    def _log_omega_f(self, m):
        log_om = np.atleast_1d(self.params["log_omega_f"])
        return float(log_om[0] if log_om.size == 1 else log_om[m])

    def _cross_kernel(self, query, log_omega):
        d2 = cdist(query, self.states, "sqeuclidean")
        return np.exp(-d2 / (2.0 * np.exp(2.0 * log_omega)))

    def _components(self):
        if self._comps is None:
            if self._sqdist is None:
                self._sqdist = cdist(self.states, self.states, "sqeuclidean")
            comps = []
            for m in range(self.n_components):
                k = np.exp(-self._sqdist
                           / (2.0 * np.exp(2.0 * self._log_omega_f(m))))
                k[np.diag_indices_from(k)] += self.jitter
                gram = GramMatrix(k, self.jitter)
                comps.append(update_q_f(gram, self.resp[:, m], self.eff_noise,
                                        self.actions))
            self._comps = comps
        return self._comps

    def _noise(self):
        if self._noise_model is None and self.noise_mode == "hetero":
            spec = KernelSpec(float(np.exp(self.params["log_omega_g"])),
                              self.jitter)
            lam = np.exp(self.params["log_lam"])
            ceiling = np.inf if self.ceiling is None else self.ceiling
            self._noise_model = DisturbanceModel(self.states, spec, lam,
                                                 self.params["mu0"], ceiling)
        return self._noise_model

    # -- prediction --------------------------------------------------------

    def noise_variance(self, query):
        """Marginal action-noise variance exp(mu + var/2) at each query row."""
        query = _as_2d(query)
        if self.noise_mode == "const":
            return np.broadcast_to(np.exp(self.params["mu0"]),
                                   (query.shape[0], self.dim)).copy()
        mu, var = self._noise().predict(query)
        return np.exp(mu + 0.5 * var)

    def predict_components(self, query):
        """Per-component predictive means and variances.

        Returns ``(means, variances)`` with shape (Q, M, D); variances are
        the latent-function variances plus the marginal noise variance.
        """
        query = _as_2d(query)
        nq = query.shape[0]
        comps = self._components()
        means = np.zeros((nq, self.n_components, self.dim))
        covs = np.ones((nq, self.n_components, self.dim))
        for m, comp in enumerate(comps):
            k_all = self._cross_kernel(query, self._log_omega_f(m))
            for d in range(self.dim):
                idx = comp.active[d]
                if idx.size == 0:
                    continue
                ks = k_all[:, idx]
                means[:, m, d] = ks @ comp.t[d]
                v = solve_triangular(comp.chol[d],
                                     comp.root_b[d][:, None] * ks.T,
                                     lower=True, check_finite=False)
                covs[:, m, d] = np.maximum(1.0 - np.einsum("ij,ij->j", v, v),
                                           0.0)
        variances = covs + self.noise_variance(query)[:, None, :]
        return means, variances

    def predict(self, query):
        """Mean and variance of the minimum-variance component per row."""
        query = _as_2d(query)
        means, variances = self.predict_components(query)
        mode = np.argmin(variances.sum(axis=2), axis=1)
        rows = np.arange(query.shape[0])
        return means[rows, mode], variances[rows, mode], mode

    def act(self, state):
        """Action for a single state (mean of the selected component)."""
        mean, _, _ = self.predict(np.asarray(state, dtype=float)[None, :])
        return mean[0]

    def act_batch(self, states):
        mean, _, _ = self.predict(states)
        return mean

    # -- persistence -------------------------------------------------------

    def to_dict(self):
        payload = {
            "format": FORMAT_TAG,
            "noise_mode": self.noise_mode,
            "jitter": self.jitter,
            "ceiling": self.ceiling,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "resp": self.resp.tolist(),
            "eff_noise": self.eff_noise.tolist(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }
        return payload

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload):
        if payload.get("format") != FORMAT_TAG:
            raise ValueError("unrecognized policy format: %r"
                             % payload.get("format"))
        params = {k: np.asarray(v, dtype=float)
                  for k, v in payload["params"].items()}
        return cls(np.asarray(payload["states"], dtype=float),
                   np.asarray(payload["actions"], dtype=float),
                   np.asarray(payload["resp"], dtype=float),
                   np.asarray(payload["eff_noise"], dtype=float),
                   params, payload["noise_mode"],
                   jitter=payload["jitter"], ceiling=payload["ceiling"])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
