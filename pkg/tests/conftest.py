"""Shared fixtures: small spaces and surrogates sized for fast brute-force
oracles."""

from __future__ import annotations

import pytest

from mltune.measurement import SampleSet, SurrogateRunner, SurrogateSpec, SurrogateTerm
from mltune.paramspace import ParamDef, ParamSpace, ValidityRule, builtin_space
from mltune.tuner import measure_configs


def reduced_convolution(values=(1, 8, 64)) -> ParamSpace:
    """Convolution space with the size parameters thinned to a few values."""
    full = builtin_space("convolution")
    params = tuple(
        ParamDef(p.name, values if len(p.values) == 8 else p.values)
        for p in full.params
    )
    return ParamSpace("convolution-reduced", params)


def collect_samples(space: ParamSpace, runner, n: int, seed: int) -> SampleSet:
    configs = space.sample_random(n, seed)
    return SampleSet(space, getattr(runner, "runner_id", "runner"),
                     tuple(measure_configs(space, runner, configs)))


@pytest.fixture
def tiny_space() -> ParamSpace:
    return ParamSpace("tiny", (
        ParamDef("a", (1, 2, 4)),
        ParamDef("b", (0, 1)),
        ParamDef("c", (10, 20, 30, 40)),
    ))


def make_space512() -> ParamSpace:
    return ParamSpace("bench512", (
        ParamDef("wg_x", (1, 2, 4, 8, 16, 32, 64, 128)),
        ParamDef("ppt_x", (1, 2, 4, 8, 16, 32, 64, 128)),
        ParamDef("flag_a", (0, 1)),
        ParamDef("flag_b", (0, 1)),
        ParamDef("flag_c", (0, 1)),
    ))


def make_surrogate512(noise_cv: float = 0.0, seed: int = 11) -> SurrogateSpec:
    """Noise-free by default; factor tables chosen so every configuration
    has a distinct true time (generic irrational-ish ratios)."""
    terms = []
    wg_factors = (3.1, 1.7, 1.13, 0.97, 1.02, 1.31, 1.83, 2.41)
    ppt_factors = (1.9, 1.21, 0.93, 0.89, 1.07, 1.43, 2.03, 2.71)
    values = (1, 2, 4, 8, 16, 32, 64, 128)
    for v, f in zip(values, wg_factors):
        terms.append(SurrogateTerm(("wg_x",), (v,), f))
    for v, f in zip(values, ppt_factors):
        terms.append(SurrogateTerm(("ppt_x",), (v,), f))
    terms.append(SurrogateTerm(("flag_a",), (1,), 0.83))
    terms.append(SurrogateTerm(("flag_b",), (1,), 1.19))
    terms.append(SurrogateTerm(("flag_c",), (1,), 0.71))
    terms.append(SurrogateTerm(("flag_a", "flag_c"), (1, 1), 1.37))
    terms.append(SurrogateTerm(("wg_x", "flag_b"), (128, 1), 1.61))
    return SurrogateSpec(base_time=0.25, terms=tuple(terms),
                         noise_cv=noise_cv, seed=seed)


@pytest.fixture
def space512() -> ParamSpace:
    return make_space512()


@pytest.fixture
def runner512(space512) -> SurrogateRunner:
    return SurrogateRunner(make_surrogate512(), space512, runner_id="bench512")


def make_trap() -> tuple[ParamSpace, SurrogateSpec]:
    """Execution time falls steeply toward a corner that cannot launch, so
    a model trained on valid samples predicts the invalid region fastest."""
    vals = tuple(range(16))
    space = ParamSpace("trap", (ParamDef("x", vals), ParamDef("y", vals)))
    terms = []
    for v in vals:
        f = 2.0 ** (-v / 2)
        if f != 1.0:
            terms.append(SurrogateTerm(("x",), (v,), f))
            terms.append(SurrogateTerm(("y",), (v,), f))
    spec = SurrogateSpec(
        base_time=1.0, terms=tuple(terms), noise_cv=0.0,
        invalid_rules=(ValidityRule("max-weighted-sum", ("x", "y"), bound=19),),
        seed=7,
    )
    return space, spec
