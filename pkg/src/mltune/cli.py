"""Command-line front end for the auto-tuning pipeline.

Subcommands cover the whole workflow: inspect spaces, measure random
samples, train models, predict, run the two-stage tuner, sweep a space
exhaustively, and run the evaluation harness. A JSON manifest can supply
any argument; explicit flags override it.

Exit codes: 0 success, 2 usage/input error, 3 runner failure, 4 all
second-stage candidates invalid, 5 insufficient data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .errors import (
    EXIT_ALL_INVALID,
    EXIT_INSUFFICIENT_DATA,
    EXIT_OK,
    EXIT_RUNNER,
    EXIT_USAGE,
    AllCandidatesInvalidError,
    EmptySpaceError,
    InsufficientDataError,
    MltuneError,
    ParseError,
    RunnerError,
)
from .measurement import (
    DEFAULT_INVALID_EXIT_CODE,
    SampleWriter,
    SurrogateRunner,
    ExternalRunner,
    load_samples,
    load_surrogate_spec,
    measured_indices,
)
from .model import (
    DEFAULT_BAG_COUNT,
    TrainConfig,
    load_model,
    save_model,
    train_ensemble,
)
from .paramspace import ParamSpace, resolve_space
from .profiles import PROFILE_NAMES, builtin_surrogate
from .tuner import TunerConfig, autotune, exhaustive_search, save_report_bundle
from .serialize import dumps_17g


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mltune",
        description="Machine-learning based auto-tuner for finite configuration spaces.",
    )
    parser.add_argument("--manifest", help="JSON file supplying defaults for any flag")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_space(p):
        p.add_argument("--space", help="built-in space name or space JSON file")

    def add_runner(p):
        p.add_argument("--surrogate",
                       help="surrogate profile name or surrogate spec JSON file")
        p.add_argument("--command",
                       help="external benchmark command template with {param} placeholders")
        p.add_argument("--invalid-exit-code", type=int, default=None,
                       help=f"exit code meaning invalid configuration "
                            f"(default {DEFAULT_INVALID_EXIT_CODE})")

    def add_train_flags(p):
        p.add_argument("--k", type=int, default=None,
                       help=f"bagging fold count (default {DEFAULT_BAG_COUNT})")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel workers for member training")

    p_space = sub.add_parser("space", help="inspect a parameter space")
    space_sub = p_space.add_subparsers(dest="space_command", required=True)
    p_info = space_sub.add_parser("info", help="print parameters and cardinality")
    p_info.add_argument("name", help="built-in space name or space JSON file")
    p_index = space_sub.add_parser("index", help="print the configuration at an index")
    p_index.add_argument("name", help="built-in space name or space JSON file")
    p_index.add_argument("index", type=int)

    p_measure = sub.add_parser("measure", help="measure a random sample into a CSV")
    add_space(p_measure)
    add_runner(p_measure)
    p_measure.add_argument("--n", type=int, default=None, help="number of configurations")
    p_measure.add_argument("--seed", type=int, default=None)
    p_measure.add_argument("--out", default=None, help="output CSV path")
    p_measure.add_argument("--resume", action="store_true",
                           help="append to an existing CSV, skipping measured configs")

    p_train = sub.add_parser("train", help="train a model from a sample CSV")
    add_space(p_train)
    add_train_flags(p_train)
    p_train.add_argument("--samples", default=None, help="input sample CSV")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None, help="output model JSON path")

    p_predict = sub.add_parser("predict", help="predict times from a saved model")
    p_predict.add_argument("--model", default=None, help="model JSON path")
    p_predict.add_argument("--index", type=int, default=None,
                           help="single configuration index (default: full sweep)")
    p_predict.add_argument("--out", default=None, help="output predictions CSV")

    p_tune = sub.add_parser("tune", help="run the two-stage auto-tuner")
    add_space(p_tune)
    add_runner(p_tune)
    add_train_flags(p_tune)
    p_tune.add_argument("--n", type=int, default=None, help="stage-1 sample size N")
    p_tune.add_argument("--m", type=int, default=None, help="stage-2 candidate count M")
    p_tune.add_argument("--seed", type=int, default=None)
    p_tune.add_argument("--sweep-cap", type=int, default=None,
                        help="cap on configurations scored in stage 2")
    p_tune.add_argument("--out", default=None, help="output directory for the report bundle")

    p_oracle = sub.add_parser("oracle", help="exhaustively measure a whole space")
    add_space(p_oracle)
    add_runner(p_oracle)
    p_oracle.add_argument("--out", default=None, help="output CSV for the full sweep")

    p_eval = sub.add_parser("eval", help="evaluation harness")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_curve = eval_sub.add_parser("curve", help="accuracy vs training-set size")
    add_space(p_curve)
    add_runner(p_curve)
    add_train_flags(p_curve)
    p_curve.add_argument("--sizes", type=_int_list, default=None,
                         help="comma-separated training sizes")
    p_curve.add_argument("--repeats", type=int, default=None)
    p_curve.add_argument("--holdout", type=int, default=None)
    p_curve.add_argument("--seed", type=int, default=None)
    p_curve.add_argument("--out", default=None)

    p_scatter = eval_sub.add_parser("scatter", help="predicted vs actual export")
    add_space(p_scatter)
    add_runner(p_scatter)
    p_scatter.add_argument("--model", default=None, help="model JSON path")
    p_scatter.add_argument("--samples", default=None,
                           help="holdout sample CSV (default: sample one)")
    p_scatter.add_argument("--points", type=int, default=None)
    p_scatter.add_argument("--holdout", type=int, default=None)
    p_scatter.add_argument("--seed", type=int, default=None)
    p_scatter.add_argument("--out", default=None)

    p_grid = eval_sub.add_parser("grid", help="slowdown grid over (N, M) budgets")
    add_space(p_grid)
    add_runner(p_grid)
    add_train_flags(p_grid)
    p_grid.add_argument("--n-values", type=_int_list, default=None)
    p_grid.add_argument("--m-values", type=_int_list, default=None)
    p_grid.add_argument("--repeats", type=int, default=None)
    p_grid.add_argument("--seed", type=int, default=None)
    p_grid.add_argument("--out", default=None)

    p_base = eval_sub.add_parser("baseline", help="best of N random configurations")
    add_space(p_base)
    add_runner(p_base)
    p_base.add_argument("--n-random", type=int, default=None)
    p_base.add_argument("--seed", type=int, default=None)
    p_base.add_argument("--out", default=None)

    p_transfer = eval_sub.add_parser("transfer",
                                     help="cross-device optimum transfer matrix")
    add_space(p_transfer)
    p_transfer.add_argument("--surrogate", action="append", default=None,
                            help="surrogate profile or spec file (repeat per device)")
    p_transfer.add_argument("--out", default=None)

    return parser


# -- manifest merging ---------------------------------------------------------


class _Options:
    """argparse namespace merged with manifest values."""

    def __init__(self, args: argparse.Namespace, manifest: dict):
        self._args = args
        self._manifest = manifest

    def get(self, key: str, default=None, required: bool = False):
        value = getattr(self._args, key, None)
        if value in (None, False):
            value = self._manifest.get(key, None)
        if value is None:
            value = default
        if value is None and required:
            raise SystemExit(
                _usage_error(f"missing required option --{key.replace('_', '-')}")
            )
        return value


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _load_manifest(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest: {exc}", path=path) from exc
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object", path=path)
    return {str(k).replace("-", "_"): v for k, v in doc.items()}


def _get_space(opts: _Options) -> ParamSpace:
    return resolve_space(str(opts.get("space", required=True)))


def _build_runner(opts: _Options, space: ParamSpace):
    surrogate = opts.get("surrogate")
    command = opts.get("command")
    if (surrogate is None) == (command is None):
        raise SystemExit(_usage_error(
            "exactly one of --surrogate or --command is required"))
    if command is not None:
        exit_code = int(opts.get("invalid_exit_code", DEFAULT_INVALID_EXIT_CODE))
        return ExternalRunner(str(command), space, invalid_exit_code=exit_code)
    name = str(surrogate)
    if name in PROFILE_NAMES:
        spec = builtin_surrogate(name, space)
        return SurrogateRunner(spec, space, runner_id=name)
    spec = load_surrogate_spec(name)
    return SurrogateRunner(spec, space, runner_id=Path(name).stem)


def _surrogate_runner_from_name(name: str, space: ParamSpace) -> SurrogateRunner:
    if name in PROFILE_NAMES:
        return SurrogateRunner(builtin_surrogate(name, space), space, runner_id=name)
    return SurrogateRunner(load_surrogate_spec(name), space,
                           runner_id=Path(name).stem)


def _train_cfg(opts: _Options, default_seed: int) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        epochs=int(opts.get("epochs", base.epochs)),
        learning_rate=float(opts.get("lr", base.learning_rate)),
        seed=int(opts.get("train_seed", default_seed)),
    )


# -- subcommands ----------------------------------------------------------------


def cmd_space(args, opts: _Options) -> int:
    space = resolve_space(args.name)
    if args.space_command == "info":
        print(f"space: {space.name}")
        print(f"parameters: {len(space.params)}")
        width = max(len(p.name) for p in space.params)
        for p in space.params:
            print(f"  {p.name:<{width}}  {list(p.values)}")
        if space.rules:
            print(f"rules: {len(space.rules)}")
            for r in space.rules:
                print(f"  {r.kind} over {list(r.operands)} "
                      f"coefficients={list(r.coefficients)} bound={r.bound}")
        print(f"cardinality: {space.cardinality()}")
    else:
        config = space.config_at(args.index)
        for name, value in space.to_dict(config).items():
            print(f"{name}={value}")
    return EXIT_OK


def cmd_measure(args, opts: _Options) -> int:
    space = _get_space(opts)
    runner = _build_runner(opts, space)
    n = int(opts.get("n", required=True))
    seed = int(opts.get("seed", 0))
    out = Path(str(opts.get("out", required=True)))
    resume = bool(opts.get("resume", False))

    done: set[int] = set()
    if resume and out.exists():
        done = measured_indices(out, space)
    configs = space.sample_random(n, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = 0
    with SampleWriter(out, space, runner.runner_id, append=resume) as writer:
        for config in configs:
            if space.index_of(config) in done:
                continue
            if not space.is_statically_valid(config):
                from .measurement import Outcome, Sample, STATUS_INVALID_STATIC
                sample = Sample(config, Outcome.invalid(STATUS_INVALID_STATIC),
                                runner.default_repetitions)
            else:
                sample = runner.measure(config)
            writer.write(sample)
            written += 1
    print(f"measured {written} configurations -> {out}")
    return EXIT_OK


def cmd_train(args, opts: _Options) -> int:
    space = _get_space(opts)
    samples = load_samples(str(opts.get("samples", required=True)), space)
    seed = int(opts.get("seed", 0))
    k = int(opts.get("k", DEFAULT_BAG_COUNT))
    jobs = int(opts.get("jobs", 1))
    ensemble = train_ensemble(samples, space, k=k, cfg=_train_cfg(opts, seed), jobs=jobs)
    out = Path(str(opts.get("out", required=True)))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(ensemble, out)
    print(f"trained k={k} ensemble on {len(samples.valid_samples())} valid samples -> {out}")
    return EXIT_OK


def cmd_predict(args, opts: _Options) -> int:
    ensemble = load_model(str(opts.get("model", required=True)))
    out = Path(str(opts.get("out", required=True)))
    out.parent.mkdir(parents=True, exist_ok=True)
    index = opts.get("index")
    card = 1
    for _, values in ensemble.encoder.params:
        card *= len(values)
    if index is not None:
        indices = np.array([int(index)], dtype=np.int64)
        if not 0 <= int(index) < card:
            raise SystemExit(_usage_error(f"index {index} out of range for {card}"))
    else:
        indices = np.arange(card, dtype=np.int64)
    with open(out, "w", newline="") as fh:
        fh.write("config_index,predicted_seconds\n")
        chunk = 1 << 17
        for start in range(0, len(indices), chunk):
            part = indices[start:start + chunk]
            preds = ensemble.predict_indices(part)
            for i, p in zip(part, preds):
                fh.write(f"{int(i)},{format(float(p), '.17g')}\n")
    print(f"wrote {len(indices)} predictions -> {out}")
    return EXIT_OK


def cmd_tune(args, opts: _Options) -> int:
    space = _get_space(opts)
    runner = _build_runner(opts, space)
    seed = int(opts.get("seed", 0))
    cfg = TunerConfig(
        n_train=int(opts.get("n", required=True)),
        m_candidates=int(opts.get("m", required=True)),
        k_bag=int(opts.get("k", DEFAULT_BAG_COUNT)),
        seed=seed,
        train_cfg=_train_cfg(opts, seed),
        max_prediction_sweep=opts.get("sweep_cap"),
    )
    out = Path(str(opts.get("out", required=True)))
    jobs = int(opts.get("jobs", 1))
    try:
        report = autotune(space, runner, cfg, jobs=jobs)
    except AllCandidatesInvalidError as exc:
        if exc.report is not None:
            save_report_bundle(exc.report, out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_INVALID
    report_path = save_report_bundle(report, out)
    best = space.to_dict(report.best_config)
    print(f"best configuration: {best}")
    print(f"measured time: {report.best_time:.9g}s "
          f"(predicted {report.predicted_best_time:.9g}s)")
    print(f"report -> {report_path}")
    return EXIT_OK


def cmd_oracle(args, opts: _Options) -> int:
    space = _get_space(opts)
    runner = _build_runner(opts, space)
    out = Path(str(opts.get("out", required=True)))
    out.parent.mkdir(parents=True, exist_ok=True)

    from .measurement import Outcome, Sample, STATUS_INVALID_STATIC

    best: tuple[float, int] | None = None
    card = space.cardinality()
    with SampleWriter(out, space, runner.runner_id) as writer:
        if hasattr(runner, "measured_times"):
            chunk = 1 << 15
            for start in range(0, card, chunk):
                indices = np.arange(start, min(start + chunk, card), dtype=np.int64)
                values = space.decode_indices(indices)
                static_ok = space.static_valid_mask(values)
                run_idx = indices[static_ok]
                times, ok = runner.measured_times(run_idx, runner.default_repetitions)
                pos = 0
                for i, is_static_ok in zip(indices, static_ok):
                    config = tuple(int(v) for v in values[i - start])
                    if not is_static_ok:
                        writer.write(Sample(config, Outcome.invalid(STATUS_INVALID_STATIC)))
                        continue
                    if ok[pos]:
                        t = float(times[pos])
                        writer.write(Sample(config, Outcome.valid(t)))
                        key = (t, int(i))
                        if best is None or key < best:
                            best = key
                    else:
                        writer.write(Sample(config, Outcome.invalid("invalid-launch")))
                    pos += 1
        else:
            for index in range(card):
                config = space.config_at(index)
                if not space.is_statically_valid(config):
                    writer.write(Sample(config, Outcome.invalid(STATUS_INVALID_STATIC)))
                    continue
                sample = runner.measure(config)
                writer.write(sample)
                if sample.outcome.is_valid:
                    key = (sample.outcome.time, index)
                    if best is None or key < best:
                        best = key
    if best is None:
        raise EmptySpaceError(f"space {space.name!r} has no valid configuration")
    time, index = best
    print(f"swept {card} configurations -> {out}")
    print(f"optimum: index {index} {space.to_dict(space.config_at(index))} "
          f"time {time:.9g}s")
    return EXIT_OK


def cmd_eval(args, opts: _Options) -> int:
    which = args.eval_command
    out = Path(str(opts.get("out", required=True)))
    out.parent.mkdir(parents=True, exist_ok=True)
    seed = int(opts.get("seed", 0))

    if which == "transfer":
        space = _get_space(opts)
        names = opts.get("surrogate", required=True)
        if not isinstance(names, list) or len(names) < 2:
            raise SystemExit(_usage_error("transfer needs at least two --surrogate"))
        runners = [_surrogate_runner_from_name(str(n), space) for n in names]
        report = evaluation.transfer_report(space, runners)
        evaluation.write_transfer_csv(report, out)
        print(f"transfer matrix for {list(report.runner_ids)} -> {out}")
        return EXIT_OK

    space = _get_space(opts)
    runner = _build_runner(opts, space)

    if which == "curve":
        points = evaluation.learning_curve(
            space, runner,
            sizes=list(opts.get("sizes", required=True)),
            repeats=int(opts.get("repeats", 5)),
            seed=seed,
            k=int(opts.get("k", DEFAULT_BAG_COUNT)),
            holdout_size=int(opts.get("holdout", evaluation.DEFAULT_HOLDOUT_SIZE)),
        )
        evaluation.write_learning_curve_csv(points, out)
        for p in points:
            mre = "failed" if p.mre is None else f"{p.mre:.4f}"
            print(f"n_train={p.n_train} mean MRE={mre}")
    elif which == "scatter":
        ensemble = load_model(str(opts.get("model", required=True)))
        samples_path = opts.get("samples")
        if samples_path is not None:
            holdout = load_samples(str(samples_path), space)
        else:
            holdout = evaluation.sample_valid_set(
                space, runner,
                int(opts.get("holdout", evaluation.DEFAULT_HOLDOUT_SIZE)),
                seed,
            )
        rows = evaluation.scatter_export(
            ensemble, holdout, n_points=int(opts.get("points", 100)), seed=seed)
        evaluation.write_scatter_csv(rows, out)
        print(f"wrote {len(rows)} scatter points -> {out}")
    elif which == "grid":
        cells = evaluation.slowdown_grid(
            space, runner,
            n_values=list(opts.get("n_values", required=True)),
            m_values=list(opts.get("m_values", required=True)),
            repeats=int(opts.get("repeats", 5)),
            seed=seed,
            k=int(opts.get("k", DEFAULT_BAG_COUNT)),
        )
        evaluation.write_slowdown_grid_csv(cells, out)
        for c in cells:
            slow = "missing" if c.mean_slowdown is None else f"{c.mean_slowdown:.4f}"
            print(f"N={c.n_train} M={c.m_candidates} mean slowdown={slow} "
                  f"(invalid runs {c.invalid_run_count}/{c.n_repeats})")
    elif which == "baseline":
        config, time = evaluation.random_baseline(
            space, runner, int(opts.get("n_random", required=True)), seed)
        doc = {
            "n_random": int(opts.get("n_random")),
            "seed": seed,
            "best_index": space.index_of(config),
            "best_config": space.to_dict(config),
            "best_time": time,
        }
        out.write_text(dumps_17g(doc) + "\n")
        print(f"baseline best {space.to_dict(config)} time {time:.9g}s -> {out}")
    else:  # pragma: no cover - argparse enforces choices
        raise SystemExit(_usage_error(f"unknown eval subcommand {which!r}"))
    return EXIT_OK


_DISPATCH = {
    "space": cmd_space,
    "measure": cmd_measure,
    "train": cmd_train,
    "predict": cmd_predict,
    "tune": cmd_tune,
    "oracle": cmd_oracle,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        manifest = _load_manifest(args.manifest)
        opts = _Options(args, manifest)
        return _DISPATCH[args.subcommand](args, opts)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ParseError, FileNotFoundError, IndexError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunnerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNNER
    except AllCandidatesInvalidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_INVALID
    except (InsufficientDataError, EmptySpaceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT_DATA
    except MltuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
