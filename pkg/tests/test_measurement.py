"""Runners, outcomes, and sample persistence."""

import math
import os
import stat

import numpy as np
import pytest

from mltune.errors import InvalidConfigurationError, ParseError, RunnerError
from mltune.measurement import (
    ExternalRunner,
    Outcome,
    Sample,
    SampleSet,
    SurrogateRunner,
    SurrogateSpec,
    SurrogateTerm,
    load_samples,
    load_surrogate_spec,
    save_samples,
    save_surrogate_spec,
    surrogate_true_time,
)
from mltune.paramspace import ParamDef, ParamSpace, ValidityRule, builtin_space

from conftest import collect_samples, make_space512, make_surrogate512


# -- outcomes -----------------------------------------------------------------


def test_outcome_invariants():
    assert Outcome.valid(0.5).is_valid
    assert not Outcome.invalid("invalid-launch").is_valid
    with pytest.raises(ValueError):
        Outcome.valid(0.0)
    with pytest.raises(ValueError):
        Outcome.valid(-1.0)
    with pytest.raises(ValueError):
        Outcome("invalid-launch", 1.0)
    with pytest.raises(ValueError):
        Outcome("weird-status", None)


def test_sample_set_rejects_foreign_configs(tiny_space):
    with pytest.raises(Exception):
        SampleSet(tiny_space, "r", (Sample((99, 0, 10), Outcome.valid(1.0)),))


# -- surrogate basics ----------------------------------------------------------


def _flag_space():
    return ParamSpace("flags", (ParamDef("flag", (0, 1)), ParamDef("other", (0, 1))))


def test_surrogate_no_terms_returns_base_time():
    space = _flag_space()
    spec = SurrogateSpec(base_time=1.0)
    runner = SurrogateRunner(spec, space)
    sample = runner.measure((0, 0))
    assert sample.outcome.is_valid and sample.outcome.time == 1.0


def test_surrogate_single_factor():
    space = _flag_space()
    spec = SurrogateSpec(base_time=1.0,
                         terms=(SurrogateTerm(("flag",), (1,), 0.5),))
    runner = SurrogateRunner(spec, space)
    assert runner.measure((1, 0)).outcome.time == 0.5
    assert runner.measure((0, 0)).outcome.time == 1.0


def test_surrogate_factors_commute_and_cancel():
    space = _flag_space()
    spec = SurrogateSpec(base_time=2.0, terms=(
        SurrogateTerm(("flag",), (1,), 0.5),
        SurrogateTerm(("other",), (1,), 2.0),
    ))
    assert surrogate_true_time(spec, space, (1, 1)) == 2.0


def test_pair_term_requires_both_values():
    space = _flag_space()
    spec = SurrogateSpec(base_time=1.0,
                         terms=(SurrogateTerm(("flag", "other"), (1, 1), 0.25),))
    runner = SurrogateRunner(spec, space)
    assert runner.measure((1, 1)).outcome.time == 0.25
    assert runner.measure((1, 0)).outcome.time == 1.0
    assert runner.measure((0, 1)).outcome.time == 1.0


def test_invalid_rule_fires_as_launch_failure():
    space = _flag_space()
    spec = SurrogateSpec(base_time=1.0, invalid_rules=(
        ValidityRule("forbidden-combination", ("flag",), coefficients=(1,)),))
    runner = SurrogateRunner(spec, space)
    sample = runner.measure((1, 0))
    assert sample.outcome.status == "invalid-launch"
    with pytest.raises(InvalidConfigurationError):
        runner.true_time((1, 0))


def test_spec_validation():
    with pytest.raises(ValueError):
        SurrogateSpec(base_time=0.0)
    with pytest.raises(ValueError):
        SurrogateSpec(base_time=1.0, noise_cv=-0.1)
    with pytest.raises(ValueError):
        SurrogateTerm(("a",), (1,), 0.0)
    with pytest.raises(ValueError):
        SurrogateTerm(("a", "b", "c"), (1, 1, 1), 0.5)


# -- surrogate optimum against a slow independent oracle ------------------------


def _slow_true_time(spec, space, config):
    assignment = space.to_dict(config)
    time = spec.base_time
    for term in spec.terms:
        if all(assignment[p] == v for p, v in zip(term.params, term.match)):
            time *= term.factor
    return time


def test_global_optimum_matches_brute_force():
    space = make_space512()
    spec = make_surrogate512()
    runner = SurrogateRunner(spec, space)
    brute = min(
        (_slow_true_time(spec, space, space.config_at(i)), i)
        for i in range(space.cardinality())
    )
    times, ok = runner.true_times(np.arange(space.cardinality()))
    assert ok.all()
    fast = (float(times.min()), int(times.argmin()))
    assert fast == pytest.approx(brute)
    # every configuration agrees, not just the optimum
    for i in range(0, space.cardinality(), 37):
        assert times[i] == pytest.approx(_slow_true_time(spec, space, space.config_at(i)))


# -- determinism and noise ------------------------------------------------------


def test_measure_is_pure(space512, runner512):
    config = space512.config_at(123)
    assert runner512.measure(config) == runner512.measure(config)


def test_scalar_and_batch_paths_agree():
    space = make_space512()
    spec = make_surrogate512(noise_cv=0.05)
    runner = SurrogateRunner(spec, space)
    idx = np.arange(0, space.cardinality(), 17)
    times, ok = runner.measured_times(idx, 1)
    for pos, i in enumerate(idx):
        sample = runner.measure(space.config_at(int(i)))
        assert sample.outcome.time == float(times[pos])


def test_noise_log_mean_is_zero():
    space = builtin_space("convolution")
    spec = SurrogateSpec(base_time=1.0, noise_cv=0.1, seed=99)
    runner = SurrogateRunner(spec, space)
    n = 10_000
    idx = np.arange(n)
    noisy, _ = runner.measured_times(idx, 1)
    true, _ = runner.true_times(idx)
    log_ratio = np.log(noisy) - np.log(true)
    sigma = spec.log_sigma
    assert abs(log_ratio.mean()) <= 3 * sigma / math.sqrt(n)
    assert log_ratio.std() == pytest.approx(sigma, rel=0.05)


def test_minimum_over_repetitions():
    space = make_space512()
    spec = make_surrogate512(noise_cv=0.2)
    runner = SurrogateRunner(spec, space)
    idx = np.arange(64)
    single, _ = runner.measured_times(idx, 1)
    best_of_5, _ = runner.measured_times(idx, 5)
    assert (best_of_5 <= single).all()
    assert (best_of_5 < single).any()

    noise_free = SurrogateRunner(make_surrogate512(noise_cv=0.0), space)
    a, _ = noise_free.measured_times(idx, 1)
    b, _ = noise_free.measured_times(idx, 5)
    assert (a == b).all()


def test_zero_noise_is_exactly_true_time(space512, runner512):
    idx = np.arange(128)
    measured, _ = runner512.measured_times(idx, 1)
    true, _ = runner512.true_times(idx)
    assert (measured == true).all()


# -- CSV persistence -------------------------------------------------------------


def test_empty_sample_set_round_trips(tmp_path, tiny_space):
    original = SampleSet(tiny_space, "r0", ())
    path = tmp_path / "empty.csv"
    save_samples(original, path)
    assert load_samples(path, tiny_space) == original


def test_sample_set_round_trips_exactly(tmp_path):
    space = make_space512()
    spec = make_surrogate512(noise_cv=0.07)
    bad = ValidityRule("max-product", ("wg_x", "ppt_x"), bound=2048)
    spec = SurrogateSpec(base_time=spec.base_time, terms=spec.terms,
                         noise_cv=spec.noise_cv, invalid_rules=(bad,),
                         seed=spec.seed)
    runner = SurrogateRunner(spec, space, runner_id="noisy512")
    original = collect_samples(space, runner, 400, seed=3)
    assert any(not s.outcome.is_valid for s in original.samples)
    path = tmp_path / "samples.csv"
    save_samples(original, path)
    assert load_samples(path, space) == original


def test_builtin_space_resolves_from_metadata(tmp_path):
    space = builtin_space("convolution")
    runner = SurrogateRunner(SurrogateSpec(base_time=1.0), space, runner_id="flat")
    original = collect_samples(space, runner, 10, seed=1)
    path = tmp_path / "conv.csv"
    save_samples(original, path)
    loaded = load_samples(path)
    assert loaded == original
    assert loaded.runner_id == "flat"


def test_load_errors_name_the_line(tmp_path, tiny_space):
    runner = SurrogateRunner(SurrogateSpec(base_time=1.0), tiny_space)
    path = tmp_path / "s.csv"
    save_samples(collect_samples(tiny_space, runner, 4, seed=1), path)

    lines = path.read_text().splitlines()
    row = lines[2].split(",")
    row[1] = "999"  # not a member of parameter a's values
    corrupted = "\n".join(lines[:2] + [",".join(row)] + lines[3:]) + "\n"
    path.write_text(corrupted)
    with pytest.raises(ParseError) as err:
        load_samples(path, tiny_space)
    assert err.value.line == 3

    path.write_text("\n".join(lines[:2]) + "\nnot,enough,fields\n")
    with pytest.raises(ParseError) as err:
        load_samples(path, tiny_space)
    assert err.value.line == 3


def test_load_rejects_bad_metadata_and_header(tmp_path, tiny_space):
    path = tmp_path / "bad.csv"
    path.write_text("config_index,a,b,c,status,time_seconds,repetitions\n")
    with pytest.raises(ParseError):
        load_samples(path, tiny_space)

    path.write_text("# mltune-samples space=tiny runner=r\nwrong,header\n")
    with pytest.raises(ParseError):
        load_samples(path, tiny_space)

    path.write_text("# mltune-samples space=custom runner=r\n")
    with pytest.raises(ParseError):
        load_samples(path)  # unknown space and none supplied


def test_invalid_rows_must_not_carry_times(tmp_path, tiny_space):
    runner = SurrogateRunner(SurrogateSpec(base_time=1.0), tiny_space)
    path = tmp_path / "s.csv"
    save_samples(collect_samples(tiny_space, runner, 2, seed=1), path)
    lines = path.read_text().splitlines()
    row = lines[2].split(",")
    row[-3] = "invalid-launch"  # keep the time -> malformed
    path.write_text("\n".join(lines[:2] + [",".join(row)]) + "\n")
    with pytest.raises(ParseError) as err:
        load_samples(path, tiny_space)
    assert err.value.line == 3


# -- external runner --------------------------------------------------------------


def _write_script(tmp_path, name, body):
    path = tmp_path / name
    path.write_text("#!/usr/bin/env python3\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return path


def test_external_runner_parses_last_line(tmp_path, tiny_space):
    script = _write_script(tmp_path, "bench.py", (
        "import sys\n"
        "a, b = int(sys.argv[1]), int(sys.argv[2])\n"
        "print('warmup noise')\n"
        "print(0.001 * a + 0.0001 * b)\n"
    ))
    runner = ExternalRunner(f"python3 {script} {{a}} {{c}}", tiny_space)
    sample = runner.measure((2, 1, 30))
    assert sample.outcome.is_valid
    assert sample.outcome.time == pytest.approx(0.002 + 0.003)


def test_external_runner_template_substitution(tiny_space):
    runner = ExternalRunner("bench --wgx {a} --flag {b}", tiny_space)
    assert runner.command_for((4, 1, 10)) == ["bench", "--wgx", "4", "--flag", "1"]


def test_external_runner_invalid_exit_code(tmp_path, tiny_space):
    script = _write_script(tmp_path, "inv.py", "import sys\nsys.exit(42)\n")
    runner = ExternalRunner(f"python3 {script} {{a}}", tiny_space)
    sample = runner.measure((1, 0, 10))
    assert sample.outcome.status == "invalid-launch"


def test_external_runner_errors(tmp_path, tiny_space):
    crash = _write_script(tmp_path, "crash.py", "import sys\nsys.exit(3)\n")
    runner = ExternalRunner(f"python3 {crash} {{a}}", tiny_space)
    with pytest.raises(RunnerError):
        runner.measure((1, 0, 10))

    garbled = _write_script(tmp_path, "garbled.py", "print('not a number')\n")
    runner = ExternalRunner(f"python3 {garbled} {{a}}", tiny_space)
    with pytest.raises(RunnerError):
        runner.measure((1, 0, 10))

    runner = ExternalRunner("/no/such/binary {a}", tiny_space)
    with pytest.raises(RunnerError):
        runner.measure((1, 0, 10))


def test_external_runner_rejects_bad_templates(tiny_space):
    with pytest.raises(ValueError):
        ExternalRunner("bench --wgx {nonexistent}", tiny_space)
    with pytest.raises(ValueError):
        ExternalRunner("bench --fixed-args", tiny_space)


def test_external_runner_takes_min_over_repetitions(tmp_path, tiny_space):
    counter = tmp_path / "count"
    script = _write_script(tmp_path, "varying.py", (
        f"from pathlib import Path\n"
        f"p = Path({str(counter)!r})\n"
        f"n = int(p.read_text()) if p.exists() else 0\n"
        f"p.write_text(str(n + 1))\n"
        f"print(1.0 - 0.2 * n)\n"
    ))
    runner = ExternalRunner(f"python3 {script} {{a}}", tiny_space)
    sample = runner.measure((1, 0, 10), repetitions=3)
    assert sample.outcome.time == pytest.approx(0.6)
    assert sample.repetitions == 3


# -- surrogate spec persistence ----------------------------------------------------


def test_surrogate_spec_round_trip(tmp_path):
    spec = make_surrogate512(noise_cv=0.05)
    spec = SurrogateSpec(
        base_time=spec.base_time, terms=spec.terms, noise_cv=spec.noise_cv,
        invalid_rules=(ValidityRule("max-product", ("wg_x", "ppt_x"), bound=4096),),
        seed=17,
    )
    path = tmp_path / "spec.json"
    save_surrogate_spec(spec, path)
    assert load_surrogate_spec(path) == spec


def test_surrogate_spec_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"terms": []}')
    with pytest.raises(ParseError):
        load_surrogate_spec(path)
