"""Two-stage auto-tuning.

Stage one measures a random sample of configurations and trains the
ensemble on the valid ones. Stage two predicts over the whole space,
measures the candidates with the lowest predicted times, and returns the
fastest measured one. The result is attributable to the model: stage-one
measurements are reported but never compete for the final answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllCandidatesInvalidError, EmptySpaceError, InsufficientDataError
from .measurement import (
    STATUS_INVALID_STATIC,
    Outcome,
    Sample,
    SampleSet,
    save_samples,
)
from .model import DEFAULT_BAG_COUNT, Ensemble, TrainConfig, train_ensemble
from .paramspace import Configuration, ParamSpace
from .serialize import dumps_17g

_SWEEP_CHUNK = 1 << 17
REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TunerConfig:
    """Budgets and seeds for one auto-tuning run."""

    n_train: int
    m_candidates: int
    k_bag: int = DEFAULT_BAG_COUNT
    seed: int = 0
    train_cfg: TrainConfig | None = None
    max_prediction_sweep: int | None = None

    def __post_init__(self):
        if self.m_candidates < 1:
            raise ValueError("m_candidates must be >= 1")
        if self.n_train < self.k_bag:
            raise ValueError("n_train must be at least k_bag")
        if self.max_prediction_sweep is not None and self.max_prediction_sweep < 1:
            raise ValueError("max_prediction_sweep must be >= 1 when set")

    def resolved_train_cfg(self) -> TrainConfig:
        return self.train_cfg if self.train_cfg is not None else TrainConfig(seed=self.seed)


@dataclass(frozen=True)
class TuningReport:
    """Everything an auto-tuning run produced, plus provenance.

    best_config/best_time are None only in the partial report attached to
    an AllCandidatesInvalidError.
    """

    space_name: str
    runner_id: str
    config: TunerConfig
    stage1_samples: SampleSet
    stage2_samples: SampleSet
    stage2_invalid_count: int
    best_config: Configuration | None = None
    best_index: int | None = None
    best_time: float | None = None
    predicted_best_time: float | None = None

    @property
    def measurements_total(self) -> int:
        return len(self.stage1_samples) + len(self.stage2_samples)


def measure_configs(space: ParamSpace, runner, configs,
                    repetitions: int | None = None) -> list[Sample]:
    """Measure configurations, short-circuiting statically invalid ones so
    they never reach the runner."""
    samples = []
    for config in configs:
        if not space.is_statically_valid(config):
            reps = repetitions if repetitions is not None else getattr(
                runner, "default_repetitions", 1)
            samples.append(Sample(config, Outcome.invalid(STATUS_INVALID_STATIC), reps))
        else:
            samples.append(runner.measure(config, repetitions))
    return samples


def top_m_predicted(ensemble: Ensemble, space: ParamSpace, m: int,
                    sweep_cap: int | None = None, seed: int = 0
                    ) -> list[tuple[Configuration, float]]:
    """The m statically-valid configurations with the lowest predicted
    times, ascending, ties broken by configuration index. Returns fewer
    than m when the space has fewer valid configurations."""
    if m < 1:
        raise ValueError("m must be >= 1")
    card = space.cardinality()
    if sweep_cap is not None and card > sweep_cap:
        all_indices = np.sort(space.sample_indices(sweep_cap, seed))
    else:
        all_indices = None  # full range, generated chunk by chunk

    kept_idx: list[np.ndarray] = []
    kept_pred: list[np.ndarray] = []
    total = card if all_indices is None else len(all_indices)
    for start in range(0, total, _SWEEP_CHUNK):
        stop = min(start + _SWEEP_CHUNK, total)
        if all_indices is None:
            chunk = np.arange(start, stop, dtype=np.int64)
        else:
            chunk = all_indices[start:stop]
        values = space.decode_indices(chunk)
        valid = space.static_valid_mask(values)
        if not valid.any():
            continue
        chunk = chunk[valid]
        kept_idx.append(chunk)
        kept_pred.append(ensemble.predict_indices(chunk))

    if not kept_idx:
        return []
    indices = np.concatenate(kept_idx)
    preds = np.concatenate(kept_pred)
    order = np.lexsort((indices, preds))[:m]
    return [(space.config_at(int(indices[i])), float(preds[i])) for i in order]


def autotune(space: ParamSpace, runner, cfg: TunerConfig, jobs: int = 1) -> TuningReport:
    """Run the full two-stage pipeline and return the best configuration
    measured in stage two."""
    if space.cardinality() < cfg.n_train:
        raise ValueError(
            f"n_train={cfg.n_train} exceeds space cardinality {space.cardinality()}"
        )
    runner_id = getattr(runner, "runner_id", "runner")

    stage1_configs = space.sample_random(cfg.n_train, cfg.seed)
    stage1 = SampleSet(space, runner_id, tuple(
        measure_configs(space, runner, stage1_configs)))

    n_valid = len(stage1.valid_samples())
    if n_valid < cfg.k_bag:
        raise InsufficientDataError(
            f"stage 1 produced {n_valid} valid samples, need at least {cfg.k_bag}"
        )
    ensemble = train_ensemble(stage1, space, k=cfg.k_bag,
                              cfg=cfg.resolved_train_cfg(), jobs=jobs)

    candidates = top_m_predicted(
        ensemble, space, cfg.m_candidates, cfg.max_prediction_sweep, cfg.seed
    )
    predicted_time = {space.index_of(c): p for c, p in candidates}
    stage2 = SampleSet(space, runner_id, tuple(
        measure_configs(space, runner, [c for c, _ in candidates])))

    best: tuple[float, int] | None = None
    invalid_count = 0
    for sample in stage2.samples:
        if not sample.outcome.is_valid:
            invalid_count += 1
            continue
        key = (sample.outcome.time, space.index_of(sample.config))
        if best is None or key < best:
            best = key
    if best is None:
        partial = TuningReport(
            space_name=space.name, runner_id=runner_id, config=cfg,
            stage1_samples=stage1, stage2_samples=stage2,
            stage2_invalid_count=invalid_count,
        )
        raise AllCandidatesInvalidError(
            f"all {len(stage2)} second-stage candidates were invalid", report=partial
        )

    best_time, best_index = best
    return TuningReport(
        space_name=space.name, runner_id=runner_id, config=cfg,
        stage1_samples=stage1, stage2_samples=stage2,
        stage2_invalid_count=invalid_count,
        best_config=space.config_at(best_index), best_index=best_index,
        best_time=best_time, predicted_best_time=predicted_time[best_index],
    )


def exhaustive_search(space: ParamSpace, runner) -> tuple[Configuration, float]:
    """Measure every statically-valid configuration once and return the
    fastest. Ground truth for evaluating the tuner."""
    card = space.cardinality()
    best: tuple[float, int] | None = None
    if hasattr(runner, "measured_times"):
        reps = getattr(runner, "default_repetitions", 1)
        for start in range(0, card, _SWEEP_CHUNK):
            chunk = np.arange(start, min(start + _SWEEP_CHUNK, card), dtype=np.int64)
            values = space.decode_indices(chunk)
            chunk = chunk[space.static_valid_mask(values)]
            if chunk.size == 0:
                continue
            times, ok = runner.measured_times(chunk, reps)
            if not ok.any():
                continue
            pos = int(np.nanargmin(np.where(ok, times, np.nan)))
            key = (float(times[pos]), int(chunk[pos]))
            if best is None or key < best:
                best = key
    else:
        for index in range(card):
            config = space.config_at(index)
            if not space.is_statically_valid(config):
                continue
            sample = runner.measure(config)
            if sample.outcome.is_valid:
                key = (sample.outcome.time, index)
                if best is None or key < best:
                    best = key
    if best is None:
        raise EmptySpaceError(f"space {space.name!r} has no valid configuration")
    time, index = best
    return space.config_at(index), time


# -- report persistence -------------------------------------------------------


def _samples_json(samples: SampleSet) -> list[dict]:
    rows = []
    for s in samples.samples:
        rows.append({
            "config_index": samples.space.index_of(s.config),
            "values": list(s.config),
            "status": s.outcome.status,
            "time_seconds": s.outcome.time,
            "repetitions": s.repetitions,
        })
    return rows


def report_to_json(report: TuningReport,
                   stage1_csv: str | None = None,
                   stage2_csv: str | None = None) -> dict:
    """Report as a JSON document; sample sets inline unless CSV paths are
    given, in which case the document references them."""
    cfg = report.config
    train = cfg.resolved_train_cfg()
    doc: dict = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "space_name": report.space_name,
        "runner_id": report.runner_id,
        "tuner_config": {
            "n_train": cfg.n_train,
            "m_candidates": cfg.m_candidates,
            "k_bag": cfg.k_bag,
            "seed": cfg.seed,
            "max_prediction_sweep": cfg.max_prediction_sweep,
            "train_cfg": {
                "epochs": train.epochs,
                "learning_rate": train.learning_rate,
                "batch_size": train.batch_size,
                "momentum": train.momentum,
                "weight_init_scale": train.weight_init_scale,
                "seed": train.seed,
            },
        },
        "best": None,
        "stage2_invalid_count": report.stage2_invalid_count,
        "measurements_total": report.measurements_total,
    }
    if report.best_config is not None:
        space = report.stage1_samples.space
        doc["best"] = {
            "config_index": report.best_index,
            "config": space.to_dict(report.best_config),
            "measured_time": report.best_time,
            "predicted_time": report.predicted_best_time,
        }
    doc["stage1_samples"] = {"csv": stage1_csv} if stage1_csv else _samples_json(
        report.stage1_samples)
    doc["stage2_samples"] = {"csv": stage2_csv} if stage2_csv else _samples_json(
        report.stage2_samples)
    return doc


def save_report(report: TuningReport, path,
                stage1_csv: str | None = None,
                stage2_csv: str | None = None) -> None:
    doc = report_to_json(report, stage1_csv, stage2_csv)
    Path(path).write_text(dumps_17g(doc) + "\n")


def save_report_bundle(report: TuningReport, out_dir) -> Path:
    """Write report.json plus stage CSVs into a directory; returns the
    report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_samples(report.stage1_samples, out / "stage1.csv")
    save_samples(report.stage2_samples, out / "stage2.csv")
    report_path = out / "report.json"
    save_report(report, report_path, stage1_csv="stage1.csv", stage2_csv="stage2.csv")
    return report_path
