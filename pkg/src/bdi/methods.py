"""Method grid: {uni, multi}-modal x {none, constant, state-dependent} injection.

Six named configurations share one trainer; they differ in the mixture
truncation, the noise parameterization and how the next-iteration injection
level is produced.
"""

from dataclasses import dataclass

import numpy as np

from .disturbance import ConstantDisturbance, DisturbanceModel, NoDisturbance
from .kernels import KernelSpec

SIGMA_FLOOR = 1e-12

_GRID = {
    "UGP-BC": dict(multimodal=False, noise_mode="const", inject=False),
    "MGP-BC": dict(multimodal=True, noise_mode="const", inject=False),
    "UGP-BDI": dict(multimodal=False, noise_mode="const", inject=True),
    "MGP-BDI": dict(multimodal=True, noise_mode="const", inject=True),
    "UHGP-BDI": dict(multimodal=False, noise_mode="hetero", inject=True),
    "MHGP-BDI": dict(multimodal=True, noise_mode="hetero", inject=True),
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    multimodal: bool
    noise_mode: str
    inject: bool


def method_names():
    return list(_GRID)


def make_method(name):
    try:
        return MethodSpec(name=name, **_GRID[name])
    except KeyError:
        raise ValueError(
            f"unknown method {name!r}; choose from {', '.join(_GRID)}") from None


def apply_method(config, method):
    """Trainer settings implied by a method (returns a modified copy)."""
    from dataclasses import replace

    return replace(config,
                   truncation=config.truncation if method.multimodal else 1,
                   noise_mode=method.noise_mode)


def dart_sigma_update(fit_state):
    """Constant injection level from responsibility-weighted policy residuals.

    Per action dim: sigma_d^2 = (1/N) sum_n sum_m r_nm (a_nd - mu_f[n,m,d])^2,
    floored at SIGMA_FLOOR.
    """
    actions = fit_state.actions
    resp = fit_state.resp
    n = actions.shape[0]
    total = np.zeros(actions.shape[1])
    for m, comp in enumerate(fit_state.comps):
        total += resp[:, m] @ (actions - comp.mean) ** 2
    return np.maximum(total / n, SIGMA_FLOOR)


def build_injection_source(method, fit_state, ceiling, jitter=1e-8):
    """Disturbance source for the next collection round.

    Behavior cloning never injects; constant-noise variants inject the
    residual-matched level; heteroscedastic variants query the fitted
    log-variance model.
    """
    dim = 2 if fit_state is None else fit_state.actions.shape[1]
    if not method.inject or fit_state is None:
        return NoDisturbance(dim=dim)
    if method.noise_mode == "const":
        return ConstantDisturbance(dart_sigma_update(fit_state), ceiling)
    params = fit_state.params
    spec = KernelSpec(float(np.exp(params["log_omega_g"])), jitter)
    return DisturbanceModel(fit_state.states, spec, np.exp(params["log_lam"]),
                            params["mu0"], ceiling)
