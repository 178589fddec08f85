"""Execution-time measurement via pluggable runners, plus sample persistence.

Two runners are provided: a deterministic synthetic device surrogate (an
analytic multiplicative cost model with optional frozen log-normal noise)
and a generic external-command runner for real benchmarks. Measurements
are collected into SampleSets and persisted as CSV.
"""

from __future__ import annotations

import csv
import json
import shlex
import string
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import InvalidConfigurationError, ParseError, RunnerError
from .paramspace import (
    BUILTIN_SPACE_NAMES,
    Configuration,
    ParamSpace,
    ValidityRule,
    builtin_space,
)

STATUS_VALID = "valid"
STATUS_INVALID_STATIC = "invalid-static"
STATUS_INVALID_LAUNCH = "invalid-launch"
STATUS_INVALID_COMPILE = "invalid-compile"
INVALID_STATUSES = (
    STATUS_INVALID_STATIC,
    STATUS_INVALID_LAUNCH,
    STATUS_INVALID_COMPILE,
)
ALL_STATUSES = (STATUS_VALID,) + INVALID_STATUSES

DEFAULT_INVALID_EXIT_CODE = 42


@dataclass(frozen=True)
class Outcome:
    """Result of running one configuration: a positive time, or a reason
    it could not run."""

    status: str
    time: float | None = None

    def __post_init__(self):
        if self.status not in ALL_STATUSES:
            raise ValueError(f"unknown outcome status {self.status!r}")
        if self.status == STATUS_VALID:
            if self.time is None or not self.time > 0:
                raise ValueError("valid outcome requires a strictly positive time")
        elif self.time is not None:
            raise ValueError("invalid outcome cannot carry a time")

    @classmethod
    def valid(cls, time: float) -> "Outcome":
        return cls(STATUS_VALID, float(time))

    @classmethod
    def invalid(cls, status: str) -> "Outcome":
        return cls(status, None)

    @property
    def is_valid(self) -> bool:
        return self.status == STATUS_VALID


@dataclass(frozen=True)
class Sample:
    """One measured configuration."""

    config: Configuration
    outcome: Outcome
    repetitions: int = 1
    timestamp: float | None = None

    def __post_init__(self):
        if self.outcome.is_valid and self.repetitions < 1:
            raise ValueError("valid samples require repetitions >= 1")


@dataclass(frozen=True)
class SampleSet:
    """Samples from one space measured by one runner."""

    space: ParamSpace
    runner_id: str
    samples: tuple[Sample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for s in self.samples:
            self.space.validate_config(s.config)

    @property
    def space_name(self) -> str:
        return self.space.name

    def __len__(self) -> int:
        return len(self.samples)

    def valid_samples(self) -> list[Sample]:
        return [s for s in self.samples if s.outcome.is_valid]


# -- deterministic noise ---------------------------------------------------
#
# Per-(seed, config, repetition) noise is a pure hash of its identifiers
# (splitmix64 finalizer), so a surrogate behaves like fixed hardware:
# re-measuring the same configuration always gives the same time.

_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _C1
    x ^= x >> np.uint64(27)
    x *= _C2
    x ^= x >> np.uint64(31)
    return x


def unit_normals(seed: int, indices, rep: int) -> np.ndarray:
    """Standard-normal draws keyed by (seed, configuration index, rep)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):  # modular wrap-around is the point
        h = _mix64(np.uint64(seed & ((1 << 64) - 1)) + _GOLDEN * (idx + np.uint64(1)))
        h = _mix64(h + _GOLDEN * np.uint64((rep + 1) & ((1 << 32) - 1)))
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


# -- surrogate -------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateTerm:
    """Multiplicative effect: when every named parameter equals its match
    value, the execution time is scaled by ``factor``."""

    params: tuple[str, ...]
    match: tuple[int, ...]
    factor: float

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "match", tuple(int(v) for v in self.match))
        if len(self.params) not in (1, 2):
            raise ValueError("surrogate terms cover one parameter or a pair")
        if len(self.params) != len(self.match):
            raise ValueError("term params and match values differ in length")
        if not self.factor > 0:
            raise ValueError("term factors must be strictly positive")


@dataclass(frozen=True)
class SurrogateSpec:
    """Analytic device model: base time scaled by matching term factors,
    with optional frozen log-normal noise and launch-failure rules."""

    base_time: float
    terms: tuple[SurrogateTerm, ...] = ()
    noise_cv: float = 0.0
    invalid_rules: tuple[ValidityRule, ...] = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "invalid_rules", tuple(self.invalid_rules))
        if not self.base_time > 0:
            raise ValueError("base_time must be strictly positive")
        if self.noise_cv < 0:
            raise ValueError("noise_cv must be non-negative")

    @property
    def log_sigma(self) -> float:
        """Std dev of log-time noise for the given coefficient of variation."""
        return float(np.sqrt(np.log1p(self.noise_cv**2)))


class SurrogateRunner:
    """Deterministic synthetic device. Pure function of (config, repetitions)
    for a fixed spec; safe to share across threads."""

    def __init__(self, spec: SurrogateSpec, space: ParamSpace,
                 runner_id: str = "surrogate", default_repetitions: int = 1):
        for rule in spec.invalid_rules:
            for p in rule.operands:
                space.param_index(p)
        for term in spec.terms:
            for p in term.params:
                space.param_index(p)
        self.spec = spec
        self.space = space
        self.runner_id = runner_id
        self.default_repetitions = default_repetitions

    # vectorized core; the scalar paths wrap it so both produce identical bits

    def true_times(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Noise-free times for configuration indices.

        Returns (times, launch_ok); times are NaN where a launch rule fires.
        """
        idx = np.asarray(indices, dtype=np.int64)
        values = self.space.decode_indices(idx)
        ok = self.space.rules_mask(self.spec.invalid_rules, values)
        times = np.full(idx.shape[0], self.spec.base_time, dtype=np.float64)
        for term in self.spec.terms:
            hit = np.ones(idx.shape[0], dtype=bool)
            for p, v in zip(term.params, term.match):
                hit &= values[:, self.space.param_index(p)] == v
            times[hit] *= term.factor
        times[~ok] = np.nan
        return times, ok

    def measured_times(self, indices, repetitions: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Noisy times (min over repetitions) for configuration indices."""
        times, ok = self.true_times(indices)
        if self.spec.noise_cv > 0:
            idx = np.asarray(indices, dtype=np.int64)
            z = unit_normals(self.spec.seed, idx, 0)
            for rep in range(1, repetitions):
                z = np.minimum(z, unit_normals(self.spec.seed, idx, rep))
            times = times * np.exp(self.spec.log_sigma * z)
        return times, ok

    def true_time(self, config: Configuration) -> float:
        """Noise-free time of one configuration; raises if it cannot launch."""
        idx = self.space.index_of(config)
        times, ok = self.true_times([idx])
        if not ok[0]:
            raise InvalidConfigurationError(
                f"configuration {config} violates a launch rule of the surrogate"
            )
        return float(times[0])

    def measure(self, config: Configuration, repetitions: int | None = None) -> Sample:
        reps = self.default_repetitions if repetitions is None else repetitions
        if reps < 1:
            raise ValueError("repetitions must be >= 1")
        idx = self.space.index_of(config)
        times, ok = self.measured_times([idx], reps)
        if not ok[0]:
            return Sample(config, Outcome.invalid(STATUS_INVALID_LAUNCH), reps)
        return Sample(config, Outcome.valid(float(times[0])), reps)


def surrogate_true_time(spec: SurrogateSpec, space: ParamSpace,
                        config: Configuration) -> float:
    """Ground-truth (noise-free) execution time under a surrogate spec."""
    return SurrogateRunner(spec, space).true_time(config)


def measure(runner, config: Configuration, repetitions: int | None = None) -> Sample:
    return runner.measure(config, repetitions)


# -- external command runner ------------------------------------------------


class ExternalRunner:
    """Runs an external benchmark command once per repetition.

    The command template names parameters in ``{braces}``; the command must
    print the execution time in seconds as the last line of stdout, or exit
    with the designated invalid exit code for configurations that cannot run.
    """

    def __init__(self, command_template: str, space: ParamSpace,
                 invalid_exit_code: int = DEFAULT_INVALID_EXIT_CODE,
                 runner_id: str = "external", default_repetitions: int = 1,
                 timeout: float | None = None):
        names = set(space.param_names())
        fields = [f for _, f, _, _ in string.Formatter().parse(command_template)
                  if f is not None]
        if not fields:
            raise ValueError("command template contains no parameter placeholders")
        unknown = [f for f in fields if f not in names]
        if unknown:
            raise ValueError(
                f"command template references unknown parameters {unknown}"
            )
        self.command_template = command_template
        self.space = space
        self.invalid_exit_code = invalid_exit_code
        self.runner_id = runner_id
        self.default_repetitions = default_repetitions
        self.timeout = timeout

    def command_for(self, config: Configuration) -> list[str]:
        rendered = self.command_template.format(**self.space.to_dict(config))
        return shlex.split(rendered)

    def _run_once(self, argv: list[str]) -> float | None:
        """One repetition; returns seconds, or None for invalid-configuration."""
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=self.timeout
            )
        except OSError as exc:
            raise RunnerError(f"failed to launch {argv[0]!r}: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise RunnerError(f"command timed out after {self.timeout}s") from exc
        if proc.returncode == self.invalid_exit_code:
            return None
        if proc.returncode != 0:
            raise RunnerError(
                f"command exited with status {proc.returncode}: "
                f"{proc.stderr.strip()[:200]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if not lines:
            raise RunnerError("command produced no output to parse a time from")
        try:
            seconds = float(lines[-1])
        except ValueError as exc:
            raise RunnerError(
                f"last output line is not a time in seconds: {lines[-1]!r}"
            ) from exc
        if not seconds > 0:
            raise RunnerError(f"reported time must be positive, got {seconds}")
        return seconds

    def measure(self, config: Configuration, repetitions: int | None = None) -> Sample:
        reps = self.default_repetitions if repetitions is None else repetitions
        if reps < 1:
            raise ValueError("repetitions must be >= 1")
        argv = self.command_for(config)
        best: float | None = None
        for _ in range(reps):
            seconds = self._run_once(argv)
            if seconds is None:
                return Sample(config, Outcome.invalid(STATUS_INVALID_LAUNCH), reps)
            best = seconds if best is None else min(best, seconds)
        return Sample(config, Outcome.valid(best), reps)


# -- CSV persistence ---------------------------------------------------------

_META_PREFIX = "# mltune-samples"


def _format_time(t: float) -> str:
    return format(t, ".17g")


class SampleWriter:
    """Incremental CSV writer; rows are flushed as they are written so a
    partial file survives a crashed run."""

    def __init__(self, path, space: ParamSpace, runner_id: str, append: bool = False):
        self.path = Path(path)
        self.space = space
        exists = append and self.path.exists() and self.path.stat().st_size > 0
        self._fh = open(self.path, "a" if exists else "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if not exists:
            self._fh.write(f"{_META_PREFIX} space={space.name} runner={runner_id}\n")
            self._writer.writerow(
                ["config_index"] + space.param_names()
                + ["status", "time_seconds", "repetitions"]
            )
            self._fh.flush()

    def write(self, sample: Sample) -> None:
        out = sample.outcome
        row = [self.space.index_of(sample.config), *sample.config, out.status,
               _format_time(out.time) if out.is_valid else "",
               sample.repetitions]
        self._writer.writerow(row)
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_samples(sample_set: SampleSet, path) -> None:
    with SampleWriter(path, sample_set.space, sample_set.runner_id) as w:
        for s in sample_set.samples:
            w.write(s)


def load_samples(path, space: ParamSpace | None = None) -> SampleSet:
    """Load a sample CSV. The space is resolved from the file's metadata
    line when it names a built-in space; otherwise pass it explicitly."""
    path = Path(path)
    with open(path, newline="") as fh:
        meta = fh.readline().rstrip("\n")
        if not meta.startswith(_META_PREFIX):
            raise ParseError("missing sample-set metadata line", path=path, line=1)
        fields = dict(
            part.split("=", 1) for part in meta[len(_META_PREFIX):].split() if "=" in part
        )
        space_name = fields.get("space", "")
        runner_id = fields.get("runner", "unknown")
        if space is None:
            if space_name in BUILTIN_SPACE_NAMES:
                space = builtin_space(space_name)
            else:
                raise ParseError(
                    f"space {space_name!r} is not built in; pass the space explicitly",
                    path=path, line=1,
                )
        elif space.name != space_name:
            raise ParseError(
                f"file holds samples for space {space_name!r}, not {space.name!r}",
                path=path, line=1,
            )

        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header row", path=path, line=2) from None
        expected = (["config_index"] + space.param_names()
                    + ["status", "time_seconds", "repetitions"])
        if header != expected:
            raise ParseError(
                f"header {header} does not match expected {expected}",
                path=path, line=2,
            )

        n_params = len(space.params)
        samples = []
        for line_no, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != len(expected):
                raise ParseError(
                    f"expected {len(expected)} fields, got {len(row)}",
                    path=path, line=line_no,
                )
            try:
                index = int(row[0])
                config = tuple(int(v) for v in row[1 : 1 + n_params])
                status = row[1 + n_params]
                time_text = row[2 + n_params]
                reps = int(row[3 + n_params])
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=line_no) from exc
            try:
                space.validate_config(config)
            except Exception as exc:
                raise ParseError(str(exc), path=path, line=line_no) from exc
            if space.index_of(config) != index:
                raise ParseError(
                    f"config_index {index} does not match configuration {config}",
                    path=path, line=line_no,
                )
            if status not in ALL_STATUSES:
                raise ParseError(f"unknown status {status!r}", path=path, line=line_no)
            if status == STATUS_VALID:
                try:
                    outcome = Outcome.valid(float(time_text))
                except ValueError as exc:
                    raise ParseError(str(exc), path=path, line=line_no) from exc
            else:
                if time_text:
                    raise ParseError(
                        "invalid rows must have an empty time_seconds",
                        path=path, line=line_no,
                    )
                outcome = Outcome.invalid(status)
            samples.append(Sample(config, outcome, reps))

    return SampleSet(space=space, runner_id=runner_id, samples=tuple(samples))


def measured_indices(path, space: ParamSpace | None = None) -> set[int]:
    """Configuration indices already present in a sample CSV."""
    existing = load_samples(path, space)
    return {existing.space.index_of(s.config) for s in existing.samples}


# -- surrogate spec persistence ----------------------------------------------


def surrogate_to_json(spec: SurrogateSpec) -> dict:
    return {
        "base_time": spec.base_time,
        "terms": [
            {"params": list(t.params), "match": list(t.match), "factor": t.factor}
            for t in spec.terms
        ],
        "noise_cv": spec.noise_cv,
        "invalid_rules": [
            {
                "kind": r.kind,
                "operands": list(r.operands),
                "coefficients": list(r.coefficients),
                "bound": r.bound,
            }
            for r in spec.invalid_rules
        ],
        "seed": spec.seed,
    }


def surrogate_from_json(doc: dict, source="<json>") -> SurrogateSpec:
    try:
        terms = tuple(
            SurrogateTerm(tuple(t["params"]), tuple(t["match"]), float(t["factor"]))
            for t in doc.get("terms", ())
        )
        rules = tuple(
            ValidityRule(
                kind=r["kind"],
                operands=tuple(r["operands"]),
                coefficients=tuple(r.get("coefficients", ())),
                bound=int(r.get("bound", 0)),
            )
            for r in doc.get("invalid_rules", ())
        )
        return SurrogateSpec(
            base_time=float(doc["base_time"]),
            terms=terms,
            noise_cv=float(doc.get("noise_cv", 0.0)),
            invalid_rules=rules,
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad surrogate spec: {exc}", path=source) from exc


def save_surrogate_spec(spec: SurrogateSpec, path) -> None:
    Path(path).write_text(json.dumps(surrogate_to_json(spec), indent=2) + "\n")


def load_surrogate_spec(path) -> SurrogateSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}", path=path) from exc
    return surrogate_from_json(doc, source=path)
