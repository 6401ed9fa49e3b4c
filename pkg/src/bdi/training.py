"""Joint variational fit of the mixture policy and the disturbance model.

The E-step cycles q(Z) -> q(v) -> q(f) until the bound stalls; the M-step
ascends the collapsed bound in the hyperparameters. The bound monitored after
every cycle is the collapsed bound at the current responsibilities, which is
non-decreasing across the whole trace (E cycles and M steps alike).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import JITTER_DEFAULT, KernelSpec, GramMatrix
from .mixture import (
    init_responsibilities,
    stick_scores,
    update_q_f,
    update_q_v,
    update_q_z,
    effective_component_count,
)
from .model import MixturePolicy
from .objective import (
    _BOUNDS,
    BoundProblem,
    improve_scalar,
    maximize_bound,
    sbp_terms,
)


@dataclass
class TrainerConfig:
    """Fit and collection-protocol settings.

    noise_mode "hetero" learns a log-variance GP per action dim; "const"
    learns one constant noise level per action dim. mu_0 is initialized at
    ln(var(action) * log_noise_factor) and lengthscales at the state range
    times lengthscale_scale. lengthscale_floor (state units) keeps both
    kernels above a resolution limit such as the agent's body size;
    lengthscale_trust > 0 confines the policy lengthscale to within that
    factor of its data-span initialization, so dense near-duplicate
    demonstrations cannot drag the kernel down to a lookup table.
    """

    truncation: int = 5
    beta_prior: float = 100.0
    noise_mode: str = "hetero"
    jitter: float = JITTER_DEFAULT
    lengthscale_scale: float = 1.0
    lengthscale_floor: float = 0.0
    lengthscale_trust: float = 0.0
    log_noise_factor: float = 0.01
    estep_tol: float = 1e-6
    estep_max_cycles: int = 100
    em_tol: float = 1e-5
    em_max_rounds: int = 50
    mstep_max_iters: int = 50
    mstep_max_fun: int = 15
    omega_g_probes: int = 6
    # demonstration-collection protocol
    iterations: int = 6
    trajectories_per_iteration: int = 2
    max_demo_retries: int = 5
    record_spacing: float = 0.0
    injection_ceiling: float | None = None

    def validate(self):
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")
        if self.beta_prior <= 0:
            raise ValueError(f"beta_prior must be positive, got {self.beta_prior}")
        if self.noise_mode not in ("hetero", "const"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.log_noise_factor <= 0:
            raise ValueError("log_noise_factor must be positive")
        for name in ("estep_max_cycles", "em_max_rounds", "mstep_max_iters",
                     "mstep_max_fun", "omega_g_probes",
                     "iterations", "trajectories_per_iteration"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_demo_retries < 0:
            raise ValueError("max_demo_retries must be >= 0")
        if self.record_spacing < 0:
            raise ValueError("record_spacing must be >= 0")
        if self.lengthscale_floor < 0:
            raise ValueError("lengthscale_floor must be >= 0")
        if self.lengthscale_trust < 0:
            raise ValueError("lengthscale_trust must be >= 0")
        return self


@dataclass
class FitReport:
    bound_trace: list = field(default_factory=list)
    round_bounds: list = field(default_factory=list)
    rounds: int = 0
    converged: bool = False
    effective_components: int = 0
    wall_time: float = 0.0
    mstep_improved: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


class FitState:
    """Everything the fit produced, in solver-ready form."""

    def __init__(self, states, actions, config, params, resp, stick_alpha,
                 stick_beta, grams, comps, eff_noise, report):
        self.states = states
        self.actions = actions
        self.config = config
        self.params = params
        self.resp = resp
        self.stick_alpha = stick_alpha
        self.stick_beta = stick_beta
        self.grams = grams
        self.comps = comps
        self.eff_noise = eff_noise
        self.report = report

    @property
    def lower_bound(self):
        return self.report.round_bounds[-1] if self.report.round_bounds else None


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _init_params(states, actions, config, warm):
    n, d_act = actions.shape
    span = float(states.max() - states.min())
    omega0 = max(span, 1e-6) * config.lengthscale_scale
    var_a = np.maximum(actions.var(axis=0), 1e-12)
    mu0 = np.clip(np.log(var_a * config.log_noise_factor), *_BOUNDS["mu0"])
    params = {
        # one policy lengthscale shared by all components: variance-based
        # mode selection needs a common kernel scale to order components by
        # data proximity
        "log_omega_f": float(np.log(omega0)),
        "mu0": mu0,
    }
    if config.noise_mode == "hetero":
        params["log_omega_g"] = float(np.log(omega0))
        params["log_lam"] = np.full((n, d_act), np.log(0.5))
    if warm is not None:
        params["log_omega_f"] = warm.params["log_omega_f"]
        params["mu0"] = warm.params["mu0"].copy()
        if config.noise_mode == "hetero":
            params["log_omega_g"] = warm.params["log_omega_g"]
            n_old = warm.params["log_lam"].shape[0]
            params["log_lam"][:n_old] = warm.params["log_lam"]
    return params


def _warm_assignments(warm, states, actions):
    """Responsibilities for rows appended after a previous fit.

    New rows are classified under the warm model's predictive mixture
    (component data-fit plus expected log stick weight).  Random assignments
    would put mass on the wrong branch wherever trajectories share states,
    and with a small fitted noise floor that misfit dwarfs every other bound
    term, leaving EM stuck before the responsibilities can untangle.
    """
    model = MixturePolicy.from_state(warm)
    means, variances = model.predict_components(states)
    resid = actions[:, None, :] - means
    log_rho = -0.5 * np.sum(np.log(2.0 * np.pi * variances)
                            + resid ** 2 / variances, axis=2)
    log_rho += stick_scores(warm.stick_alpha, warm.stick_beta)[None, :]
    log_rho -= log_rho.max(axis=1, keepdims=True)
    rho = np.exp(log_rho)
    return rho / rho.sum(axis=1, keepdims=True)


def _omega_trust(states, config):
    """Log-space box for the policy lengthscale, anchored at its init."""
    if config.lengthscale_trust <= 0:
        return None
    span = float(states.max() - states.min())
    anchor = np.log(max(span, 1e-6) * config.lengthscale_scale)
    width = np.log(config.lengthscale_trust)
    return (anchor - width, anchor + width)


def _build_grams(problem, params, jitter):
    log_om = problem.omega_f_per_component(params)
    return [GramMatrix(problem.kernel_matrix(log_om[m]), jitter)
            for m in range(log_om.shape[0])]


def em_fit(states, actions, config, rng, warm=None):
    """Fit the mixture policy (and disturbance model) to a dataset.

    Parameters
    ----------
    states : ndarray, (N, Q)
    actions : ndarray, (N, D)
    config : TrainerConfig
    rng : numpy Generator
        Drives only the responsibility initialization.
    warm : FitState, optional
        Previous fit on a prefix of this dataset; responsibilities and
        hyperparameters carry over, new rows are assigned by the warm
        model's predictive mixture.

    Returns
    -------
    FitState
    """
    t_start = time.perf_counter()
    config.validate()
    states = _as_2d(states)
    actions = _as_2d(actions)
    n, d_act = actions.shape
    if states.shape[0] != n or n == 0:
        raise ValueError("states/actions must be non-empty with matching rows")
    m_trunc = config.truncation

    params = _init_params(states, actions, config, warm)
    resp = init_responsibilities(n, m_trunc, rng)
    if warm is not None and warm.resp.shape[1] == m_trunc:
        n_old = warm.resp.shape[0]
        resp[:n_old] = warm.resp
        if n_old < n:
            resp[n_old:] = _warm_assignments(warm, states[n_old:],
                                             actions[n_old:])

    report = FitReport()
    stick_alpha, stick_beta = update_q_v(resp, config.beta_prior)
    prev_round = None
    problem = BoundProblem(states, actions, resp, stick_alpha, stick_beta,
                           config.beta_prior, config.jitter, config.noise_mode,
                           lengthscale_floor=config.lengthscale_floor,
                           omega_f_trust=_omega_trust(states, config))
    for _ in range(config.em_max_rounds):
        eff_noise, noise_value, _ = problem.noise_block(params)
        grams = _build_grams(problem, params, config.jitter)
        comps = [update_q_f(grams[m], resp[:, m], eff_noise, actions)
                 for m in range(m_trunc)]
        bound = (sum(c.data_fit for c in comps) + noise_value
                 + sbp_terms(resp, stick_alpha, stick_beta, config.beta_prior))
        report.bound_trace.append(bound)
        for _cycle in range(config.estep_max_cycles):
            resp = update_q_z(actions, comps, eff_noise, stick_alpha, stick_beta)
            stick_alpha, stick_beta = update_q_v(resp, config.beta_prior)
            comps = [update_q_f(grams[m], resp[:, m], eff_noise, actions)
                     for m in range(m_trunc)]
            new_bound = (sum(c.data_fit for c in comps) + noise_value
                         + sbp_terms(resp, stick_alpha, stick_beta, config.beta_prior))
            report.bound_trace.append(new_bound)
            done = abs(new_bound - bound) <= config.estep_tol * max(1.0, abs(new_bound))
            bound = new_bound
            if done:
                break

        problem = problem.with_assignments(resp, stick_alpha, stick_beta)
        names = ["log_omega_f", "mu0"]
        if config.noise_mode == "hetero":
            names.append("log_lam")
        params, value, improved, _ = maximize_bound(
            problem, params, names, max_iters=config.mstep_max_iters,
            max_fun=config.mstep_max_fun)
        if config.noise_mode == "hetero":
            params, value = improve_scalar(problem, params, "log_omega_g",
                                           value,
                                           max_probes=config.omega_g_probes)
        report.mstep_improved.append(improved)
        report.bound_trace.append(value)
        report.round_bounds.append(value)
        report.rounds += 1
        if prev_round is not None and abs(value - prev_round) <= config.em_tol * max(
                1.0, abs(value)):
            report.converged = True
            break
        prev_round = value

    # refresh the latent posteriors at the final hyperparameters
    eff_noise, _, _ = problem.noise_block(params)
    grams = _build_grams(problem, params, config.jitter)
    comps = [update_q_f(grams[m], resp[:, m], eff_noise, actions)
             for m in range(m_trunc)]
    report.effective_components = effective_component_count(resp)
    report.wall_time = time.perf_counter() - t_start
    return FitState(states, actions, config, params, resp, stick_alpha,
                    stick_beta, grams, comps, eff_noise, report)


def prepare_estep(states, actions, config, params, resp):
    """Grams, effective noise and component posteriors for cycle timing."""
    config.validate()
    states = _as_2d(states)
    actions = _as_2d(actions)
    stick_alpha, stick_beta = update_q_v(resp, config.beta_prior)
    problem = BoundProblem(states, actions, resp, stick_alpha, stick_beta,
                           config.beta_prior, config.jitter, config.noise_mode,
                           lengthscale_floor=config.lengthscale_floor,
                           omega_f_trust=_omega_trust(states, config))
    eff_noise, noise_value, _ = problem.noise_block(params)
    grams = _build_grams(problem, params, config.jitter)
    comps = [update_q_f(grams[m], resp[:, m], eff_noise, actions)
             for m in range(config.truncation)]
    return {
        "actions": actions,
        "config": config,
        "grams": grams,
        "eff_noise": eff_noise,
        "noise_value": noise_value,
        "resp": resp,
        "stick_alpha": stick_alpha,
        "stick_beta": stick_beta,
        "comps": comps,
    }


def estep_cycle(ctx):
    """Run exactly one E-step cycle (q(Z), q(v), q(f), bound) in place.

    ``ctx`` comes from ``prepare_estep``; the returned bound is the collapsed
    bound at the updated assignments.
    """
    config = ctx["config"]
    actions = ctx["actions"]
    resp = update_q_z(actions, ctx["comps"], ctx["eff_noise"],
                      ctx["stick_alpha"], ctx["stick_beta"])
    stick_alpha, stick_beta = update_q_v(resp, config.beta_prior)
    comps = [update_q_f(ctx["grams"][m], resp[:, m], ctx["eff_noise"], actions)
             for m in range(config.truncation)]
    bound = (sum(c.data_fit for c in comps) + ctx["noise_value"]
             + sbp_terms(resp, stick_alpha, stick_beta, config.beta_prior))
    ctx.update(resp=resp, stick_alpha=stick_alpha, stick_beta=stick_beta,
               comps=comps)
    return bound
