"""Experiment grid runner with deterministic seeding and CSV/JSON emission.

Each (world, method, trial) cell gets its own seed sequence keyed by stable
integer ids, so a rerun of the same config writes byte-identical files and
results do not depend on grid order.
"""

import csv
import json
import os
import time
import zlib

import numpy as np

from .config import WORLD_NAMES
from .loop import run_bdi
from .methods import make_method, method_names
from .simulation import make_world
from .training import TrainerConfig

CSV_COLUMNS = ["method", "world", "trial", "iteration", "n_train",
               "demo_attempts", "demo_successes", "mean_injected_level",
               "lower_bound", "test_successes", "test_rollouts"]

WORLD_PROTOCOL = {
    "wide": dict(iterations=6, trajectories_per_iteration=2,
                 record_spacing=0.4, lengthscale_floor=1.4,
                 lengthscale_trust=4.0),
    "complex": dict(iterations=5, trajectories_per_iteration=8,
                    record_spacing=0.8, lengthscale_floor=1.4,
                    lengthscale_trust=4.0),
}

_WORLD_IDS = {name: i + 1 for i, name in enumerate(WORLD_NAMES)}
_METHOD_IDS = {name: i + 1 for i, name in enumerate(method_names())}


def trainer_config_for(config, world_name, extra=None):
    """World protocol defaults, then config-wide and per-world overrides."""
    merged = dict(WORLD_PROTOCOL[world_name])
    merged.update(config.trainer)
    merged.update(config.world_overrides.get(world_name, {}))
    if extra:
        merged.update(extra)
    return TrainerConfig(**merged).validate()


def cell_seed(master_seed, world_name, method_name, trial, salt=0):
    return np.random.SeedSequence(
        [master_seed, _WORLD_IDS[world_name], _METHOD_IDS[method_name],
         trial, salt])


def _records_to_rows(result, trial, prefix=()):
    rows = []
    for rec in result.records:
        rows.append(list(prefix) + [
            result.method, result.world, trial, rec.iteration, rec.n_train,
            rec.demo_attempts, rec.demo_successes, rec.mean_injected_level,
            rec.lower_bound, rec.test_successes, rec.test_rollouts,
        ])
    return rows


def run_experiment(config, progress=None):
    """Run the full method/world/trial grid; returns the result rows."""
    config.validate()
    rows = []
    for world_name in config.worlds:
        world = make_world(world_name)
        trainer = trainer_config_for(config, world_name)
        for method_name in config.methods:
            method = make_method(method_name)
            for trial in range(1, config.n_trials + 1):
                t0 = time.perf_counter()
                seed = cell_seed(config.master_seed, world_name, method_name,
                                 trial)
                result = run_bdi(method, world, trainer, seed,
                                 n_test_rollouts=config.n_test_rollouts,
                                 test_every_iteration=config.test_every_iteration)
                rows.extend(_records_to_rows(result, trial))
                if progress is not None:
                    progress(f"{world_name} {method_name} trial {trial}: "
                             f"test={result.final_test_rate} "
                             f"failed={result.failed} "
                             f"({time.perf_counter() - t0:.1f}s)")
    return rows


def sensitivity_sweep(config, progress=None):
    """One run per (field, value) override of the sweep method and world.

    Rows carry two leading columns naming the swept field and its value.
    """
    config.validate()
    rows = []
    world = make_world(config.sweep_world)
    method = make_method(config.sweep_method)
    for name, values in sorted(config.sweep.items()):
        for value in values:
            trainer = trainer_config_for(config, config.sweep_world,
                                         extra={name: value})
            for trial in range(1, config.sweep_trials + 1):
                seed = cell_seed(config.master_seed, config.sweep_world,
                                 config.sweep_method, trial,
                                 salt=_sweep_salt(name, value))
                result = run_bdi(method, world, trainer, seed,
                                 n_test_rollouts=config.n_test_rollouts)
                rows.extend(_records_to_rows(result, trial,
                                             prefix=(name, value)))
                if progress is not None:
                    progress(f"sweep {name}={value} trial {trial}: "
                             f"test={result.final_test_rate}")
    return rows


def _sweep_salt(name, value):
    # stable across processes (no str hash randomization)
    return zlib.crc32(f"{name}={value!r}".encode())


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path, rows, columns=None):
    """CSV with the pinned column set; floats keep full repr precision."""
    columns = CSV_COLUMNS if columns is None else columns
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def aggregate_rows(rows, columns=None):
    """Final-iteration summary per (method, world): rates averaged over trials.

    Works on raw row lists (as produced by ``run_experiment`` or re-read from
    CSV); every statistic is an exact function of the row values.
    """
    columns = CSV_COLUMNS if columns is None else columns
    col = {name: i for i, name in enumerate(columns)}
    last = {}
    for row in rows:
        key = (row[col["method"]], row[col["world"]], int(row[col["trial"]]))
        best = last.get(key)
        if best is None or int(row[col["iteration"]]) > int(best[col["iteration"]]):
            last[key] = row

    def _num(value):
        if value in (None, ""):
            return None
        return float(value)

    cells = {}
    for (method, world, trial), row in sorted(last.items()):
        cell = cells.setdefault((method, world), {
            "trials": 0, "test_rates": [], "demo_rates": [], "failures": 0})
        cell["trials"] += 1
        ts, tn = _num(row[col["test_successes"]]), _num(row[col["test_rollouts"]])
        if tn:
            cell["test_rates"].append(ts / tn)
        da, ds = _num(row[col["demo_attempts"]]), _num(row[col["demo_successes"]])
        if da:
            cell["demo_rates"].append(ds / da)
        if _num(row[col["lower_bound"]]) is None:
            cell["failures"] += 1

    out = {}
    for (method, world), cell in sorted(cells.items()):
        entry = {"trials": cell["trials"], "learning_failures": cell["failures"]}
        for name in ("test_rates", "demo_rates"):
            rates = cell[name]
            stem = name[:-1]
            entry[f"mean_{stem}"] = (sum(rates) / len(rates)) if rates else None
            entry[name] = rates
        out[f"{method}/{world}"] = entry
    return out


def write_aggregates(path, aggregates):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(aggregates, fh, indent=2, sort_keys=True)
        fh.write("\n")
