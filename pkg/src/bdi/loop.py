"""Iterative demonstration collection with refit-and-inject between rounds.

Round one collects supervisor demonstrations without disturbance. Each round
fits the policy (and, depending on the method, a disturbance level or model)
on everything collected so far, then the next round injects the fitted
disturbance into the supervisor's commands. Demonstrations that end in a
collision or a timeout are discarded and retried; exhausting the retry
budget within a round aborts the run as a learning failure.
"""

from dataclasses import dataclass

import numpy as np

from .methods import apply_method, build_injection_source
from .model import MixturePolicy
from .simulation import run_demonstration, run_test_batch
from .training import em_fit


def thin_by_spacing(states, spacing):
    """Indices that decimate a trajectory to roughly uniform spatial density.

    Greedy scan: keep the first point, then every point at least ``spacing``
    away from the last kept one. Time-uniform recording oversamples the slow
    cautious stretches, which biases the mixture's predictive variances (and
    with them mode selection) toward those regions; distance-uniform
    recording keeps the per-component data density comparable.
    """
    states = np.asarray(states, dtype=float)
    if spacing <= 0 or len(states) == 0:
        return np.arange(len(states))
    keep = [0]
    last = states[0]
    for i in range(1, len(states)):
        if np.linalg.norm(states[i] - last) >= spacing:
            keep.append(i)
            last = states[i]
    return np.asarray(keep)


@dataclass
class IterationRecord:
    iteration: int
    n_train: int
    demo_attempts: int
    demo_successes: int
    mean_injected_level: float
    lower_bound: float | None
    test_successes: int | None
    test_rollouts: int | None


@dataclass
class RunResult:
    method: str
    world: str
    records: list
    failed: bool
    fit: object | None
    policy: MixturePolicy | None

    @property
    def final_test_rate(self):
        for rec in reversed(self.records):
            if rec.test_rollouts:
                return rec.test_successes / rec.test_rollouts
        return None

    @property
    def final_demo_rate(self):
        if not self.records:
            return None
        rec = self.records[-1]
        return rec.demo_successes / rec.demo_attempts if rec.demo_attempts else None


def run_bdi(method, world, config, seed, n_test_rollouts=100,
            test_every_iteration=False):
    """Run the full collection protocol for one method on one world.

    Parameters
    ----------
    method : MethodSpec
    world : WorldSpec
    config : TrainerConfig
        ``truncation``/``noise_mode`` are overridden by the method.
    seed : np.random.SeedSequence
        Spawns independent demo / fit / test streams, so results are
        reproducible regardless of how other runs are interleaved.
    n_test_rollouts : int
        Policy rollouts per evaluation (final round, or every round when
        ``test_every_iteration`` is set). Zero disables evaluation.
    """
    config = apply_method(config, method).validate()
    demo_rng, fit_rng, test_rng = [np.random.default_rng(s)
                                   for s in seed.spawn(3)]
    ceiling = (config.injection_ceiling if config.injection_ceiling is not None
               else world.default_injection_ceiling())

    inject = None  # round one never injects
    fit = None
    policy = None
    all_states, all_actions = [], []
    records = []
    failed = False

    for it in range(1, config.iterations + 1):
        attempts = 0
        successes = 0
        level_sum = 0.0
        level_count = 0
        while successes < config.trajectories_per_iteration:
            route = successes % world.n_routes
            ep = run_demonstration(world, route, demo_rng, inject)
            attempts += 1
            if ep.levels.size:
                level_sum += float(ep.levels.sum())
                level_count += ep.levels.size
            if ep.success:
                successes += 1
                keep = thin_by_spacing(ep.states, config.record_spacing)
                all_states.append(ep.states[keep])
                all_actions.append(ep.commands[keep])
            elif attempts - successes > config.max_demo_retries:
                failed = True
                break
        mean_level = level_sum / level_count if level_count else 0.0
        n_train = int(sum(s.shape[0] for s in all_states))

        if failed:
            records.append(IterationRecord(it, n_train, attempts, successes,
                                           mean_level, None, None, None))
            break

        states = np.vstack(all_states)
        actions = np.vstack(all_actions)
        fit = em_fit(states, actions, config, fit_rng, warm=fit)
        policy = MixturePolicy.from_state(fit, ceiling=ceiling)

        test_s = test_n = None
        if n_test_rollouts > 0 and (test_every_iteration
                                    or it == config.iterations):
            wins = run_test_batch(world, policy, test_rng, n_test_rollouts)
            test_s, test_n = int(wins.sum()), n_test_rollouts

        records.append(IterationRecord(it, n_train, attempts, successes,
                                       mean_level, fit.lower_bound,
                                       test_s, test_n))
        inject = build_injection_source(method, fit, ceiling,
                                        jitter=config.jitter)

    return RunResult(method.name, world.name, records, failed, fit, policy)
