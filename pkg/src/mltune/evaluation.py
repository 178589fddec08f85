"""Experiment harness: accuracy curves, prediction scatters, slowdown
grids over tuning budgets, random-search baselines, and cross-device
transfer matrices. All outputs are deterministic under fixed seeds and
exportable as CSV for external plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AllCandidatesInvalidError,
    EmptySpaceError,
    InsufficientDataError,
    MltuneError,
)
from .measurement import Sample, SampleSet
from .model import DEFAULT_BAG_COUNT, Ensemble, TrainConfig, train_ensemble
from .paramspace import Configuration, ParamSpace
from .rng import derive_seed, make_rng
from .tuner import TunerConfig, autotune, exhaustive_search, measure_configs

DEFAULT_HOLDOUT_SIZE = 500


def _format_float(x: float) -> str:
    return format(x, ".17g")


# -- accuracy ---------------------------------------------------------------


def mean_relative_error(ensemble: Ensemble, holdout: SampleSet) -> float:
    """Mean of |predicted - actual| / actual over valid holdout samples."""
    valid = holdout.valid_samples()
    if not valid:
        raise InsufficientDataError("holdout contains no valid samples")
    features = np.stack([ensemble.encoder.encode(s.config) for s in valid])
    predicted = ensemble.predict_features(features)
    actual = np.array([s.outcome.time for s in valid])
    return float(np.mean(np.abs(predicted - actual) / actual))


def sample_valid_set(space: ParamSpace, runner, size: int, seed: int,
                     exclude: frozenset[int] | set[int] = frozenset()) -> SampleSet:
    """A seeded random set of `size` measured-valid configurations.

    Statically invalid configurations are skipped without running;
    dynamically invalid measurements are discarded. Used to build fixed
    holdouts.
    """
    runner_id = getattr(runner, "runner_id", "runner")
    collected: list[Sample] = []
    for index in space.iter_random_indices(seed):
        if index in exclude:
            continue
        config = space.config_at(index)
        if not space.is_statically_valid(config):
            continue
        sample = runner.measure(config)
        if sample.outcome.is_valid:
            collected.append(sample)
            if len(collected) == size:
                return SampleSet(space, runner_id, tuple(collected))
    raise InsufficientDataError(
        f"space {space.name!r} yielded only {len(collected)} valid "
        f"configurations, needed {size}"
    )


def _sample_training_set(space: ParamSpace, runner, n: int, seed: int,
                         exclude: frozenset[int]) -> SampleSet:
    """n seeded random configurations disjoint from `exclude`, measured."""
    runner_id = getattr(runner, "runner_id", "runner")
    configs = []
    for index in space.iter_random_indices(seed):
        if index not in exclude:
            configs.append(space.config_at(index))
            if len(configs) == n:
                break
    if len(configs) < n:
        raise InsufficientDataError(
            f"cannot draw {n} configurations outside the holdout"
        )
    return SampleSet(space, runner_id, tuple(measure_configs(space, runner, configs)))


@dataclass(frozen=True)
class AccuracyPoint:
    """Model accuracy at one training-set size, over several repeats.

    repeat_mres holds None for failed repeats; failure_reasons is aligned
    with it (None for successful repeats).
    """

    n_train: int
    mre: float | None
    repeat_mres: tuple[float | None, ...]
    failure_reasons: tuple[str | None, ...]

    @property
    def n_repeats(self) -> int:
        return len(self.repeat_mres)


def learning_curve(space: ParamSpace, runner, sizes: list[int], repeats: int,
                   seed: int, k: int = DEFAULT_BAG_COUNT,
                   train_cfg: TrainConfig | None = None,
                   holdout_size: int = DEFAULT_HOLDOUT_SIZE) -> list[AccuracyPoint]:
    """Prediction error versus training-set size.

    One fixed seeded holdout of measured-valid configurations is shared by
    every size; each size runs `repeats` independent sample-train-evaluate
    rounds with derived seeds. Failed repeats are recorded, not fatal.
    """
    holdout = sample_valid_set(space, runner, holdout_size, derive_seed(seed, 0))
    exclude = frozenset(space.index_of(s.config) for s in holdout.samples)

    points = []
    for i, size in enumerate(sizes):
        mres: list[float | None] = []
        reasons: list[str | None] = []
        for rep in range(repeats):
            sample_seed = derive_seed(seed, 1 + i, rep, 0)
            net_seed = derive_seed(seed, 1 + i, rep, 1)
            cfg = (train_cfg if train_cfg is not None
                   else TrainConfig(seed=net_seed))
            try:
                train_set = _sample_training_set(space, runner, size, sample_seed, exclude)
                ensemble = train_ensemble(train_set, space, k=k, cfg=cfg)
                mres.append(mean_relative_error(ensemble, holdout))
                reasons.append(None)
            except MltuneError as exc:
                mres.append(None)
                reasons.append(f"{type(exc).__name__}: {exc}")
        ok = [m for m in mres if m is not None]
        points.append(AccuracyPoint(
            n_train=size,
            mre=float(np.mean(ok)) if ok else None,
            repeat_mres=tuple(mres),
            failure_reasons=tuple(reasons),
        ))
    return points


def scatter_export(ensemble: Ensemble, holdout: SampleSet, n_points: int = 100,
                   seed: int = 0) -> list[tuple[float, float]]:
    """(predicted, actual) pairs for a seeded subset of the holdout,
    suitable for log-log scatter plots."""
    valid = holdout.valid_samples()
    if len(valid) < n_points:
        raise InsufficientDataError(
            f"holdout has {len(valid)} valid samples, need {n_points}"
        )
    chosen = np.sort(make_rng(seed).choice(len(valid), size=n_points, replace=False))
    picked = [valid[i] for i in chosen]
    features = np.stack([ensemble.encoder.encode(s.config) for s in picked])
    predicted = ensemble.predict_features(features)
    return [(float(p), s.outcome.time) for p, s in zip(predicted, picked)]


# -- tuning quality -----------------------------------------------------------


@dataclass(frozen=True)
class SlowdownCell:
    """Mean tuner slowdown versus the global optimum for one (N, M) budget.

    mean_slowdown is None when every repeat ended with all-invalid
    candidates; such repeats are excluded from the mean and counted in
    invalid_run_count.
    """

    n_train: int
    m_candidates: int
    mean_slowdown: float | None
    n_repeats: int
    invalid_run_count: int

    @property
    def n_success(self) -> int:
        return self.n_repeats - self.invalid_run_count


def slowdown_grid(space: ParamSpace, runner, n_values: list[int],
                  m_values: list[int], repeats: int, seed: int,
                  k: int = DEFAULT_BAG_COUNT,
                  train_cfg: TrainConfig | None = None) -> list[SlowdownCell]:
    """Tuner quality over a grid of stage budgets.

    The global optimum is established once by exhaustive search; each cell
    runs the full tuner `repeats` times with derived seeds.
    """
    _, optimum_time = exhaustive_search(space, runner)
    cells = []
    for ci, n_train in enumerate(n_values):
        for cj, m_candidates in enumerate(m_values):
            cell_id = ci * len(m_values) + cj
            ratios = []
            invalid_runs = 0
            for rep in range(repeats):
                run_seed = derive_seed(seed, cell_id, rep)
                cfg = TunerConfig(
                    n_train=n_train, m_candidates=m_candidates, k_bag=k,
                    seed=run_seed, train_cfg=train_cfg,
                )
                try:
                    report = autotune(space, runner, cfg)
                    ratios.append(report.best_time / optimum_time)
                except AllCandidatesInvalidError:
                    invalid_runs += 1
            cells.append(SlowdownCell(
                n_train=n_train, m_candidates=m_candidates,
                mean_slowdown=float(np.mean(ratios)) if ratios else None,
                n_repeats=repeats, invalid_run_count=invalid_runs,
            ))
    return cells


def random_baseline(space: ParamSpace, runner, n_random: int,
                    seed: int) -> tuple[Configuration, float]:
    """Best valid measured time among n_random seeded random configs."""
    indices = space.sample_indices(n_random, seed)
    values = space.decode_indices(indices)
    indices = indices[space.static_valid_mask(values)]
    best: tuple[float, int] | None = None
    if hasattr(runner, "measured_times"):
        reps = getattr(runner, "default_repetitions", 1)
        times, ok = runner.measured_times(indices, reps)
        if ok.any():
            pos = int(np.nanargmin(np.where(ok, times, np.nan)))
            best = (float(times[pos]), int(indices[pos]))
    else:
        for index in indices:
            sample = runner.measure(space.config_at(int(index)))
            if sample.outcome.is_valid:
                key = (sample.outcome.time, int(index))
                if best is None or key < best:
                    best = key
    if best is None:
        raise EmptySpaceError("no valid configuration among the random sample")
    time, index = best
    return space.config_at(index), time


# -- cross-device transfer ----------------------------------------------------


@dataclass(frozen=True)
class TransferReport:
    """Slowdown of each device's optimum configuration on every device.

    cells[i][j] is time(optimum of runner i, measured on runner j) divided
    by time(optimum of runner j on runner j); None when runner i's optimum
    cannot run on runner j. The diagonal is exactly 1.
    """

    runner_ids: tuple[str, ...]
    optima: tuple[tuple[Configuration, float], ...]
    cells: tuple[tuple[float | None, ...], ...]


def transfer_report(space: ParamSpace, runners: list) -> TransferReport:
    ids = tuple(getattr(r, "runner_id", f"runner{i}") for i, r in enumerate(runners))
    optima = tuple(exhaustive_search(space, r) for r in runners)
    rows = []
    for best_config, _ in optima:
        row = []
        for j, runner in enumerate(runners):
            sample = runner.measure(best_config)
            if not sample.outcome.is_valid:
                row.append(None)
            else:
                row.append(sample.outcome.time / optima[j][1])
        rows.append(tuple(row))
    return TransferReport(runner_ids=ids, optima=optima, cells=tuple(rows))


# -- CSV export ---------------------------------------------------------------


def write_learning_curve_csv(points: list[AccuracyPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_train", "repeat", "mre"])
        for point in points:
            for rep, mre in enumerate(point.repeat_mres):
                w.writerow([point.n_train, rep,
                            _format_float(mre) if mre is not None else ""])


def write_scatter_csv(rows: list[tuple[float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["predicted_seconds", "actual_seconds"])
        for predicted, actual in rows:
            w.writerow([_format_float(predicted), _format_float(actual)])


def write_slowdown_grid_csv(cells: list[SlowdownCell], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_train", "m_candidates", "mean_slowdown", "n_success", "n_invalid"])
        for c in cells:
            w.writerow([
                c.n_train, c.m_candidates,
                _format_float(c.mean_slowdown) if c.mean_slowdown is not None else "",
                c.n_success, c.invalid_run_count,
            ])


def write_transfer_csv(report: TransferReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["optimum_of"] + list(report.runner_ids))
        for runner_id, row in zip(report.runner_ids, report.cells):
            w.writerow([runner_id] + [
                _format_float(c) if c is not None else "" for c in row
            ])
