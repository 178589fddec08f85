"""Bundled synthetic device profiles.

Three surrogates with deliberately different optimal regions stand in for
real hardware: a latency-oriented CPU-like device that rewards coarse
per-thread work and punishes image memory used without local caching, and
two throughput-oriented GPU-like devices that punish small work-groups but
disagree on memory placement and unrolling. Factor tables are profile
data, chosen for qualitative realism, not measurements of any device.
"""

from __future__ import annotations

from .measurement import SurrogateSpec, SurrogateTerm
from .paramspace import ParamSpace, ValidityRule

PROFILE_NAMES = ("cpu-like", "gpu-a", "gpu-b")

# Device constraint profile shared by the GPU surrogates.
MAX_WORK_GROUP_GPU = 1024
MAX_WORK_GROUP_CPU = 8192
MAX_LOCAL_BYTES = 49152
_BYTES_PER_PIXEL = 4

_PROFILE_SEEDS = {"cpu-like": 101, "gpu-a": 202, "gpu-b": 303}
_BASE_TIMES = {"cpu-like": 0.35, "gpu-a": 0.02, "gpu-b": 0.03}

# factor < 1 is faster; keyed by parameter value
_FACTORS = {
    "cpu-like": {
        "wg_x": {1: 1.15, 2: 1.05, 4: 1.0, 8: 1.0, 16: 1.02, 32: 1.05, 64: 1.1, 128: 1.18},
        "wg_y": {1: 1.1, 2: 1.02, 4: 1.0, 8: 1.0, 16: 1.03, 32: 1.06, 64: 1.12, 128: 1.2},
        "ppt_x": {1: 2.6, 2: 1.9, 4: 1.45, 8: 1.15, 16: 1.0, 32: 0.95, 64: 0.93, 128: 0.95},
        "ppt_y": {1: 2.2, 2: 1.6, 4: 1.25, 8: 1.05, 16: 1.0, 32: 1.0, 64: 1.05, 128: 1.15},
        "use_image": {1: 1.1},
        "use_local": {1: 0.98},
        "padding": {1: 1.02},
        "interleaved": {1: 0.9},
        "unroll": {1: 0.95},
        "img_data": {1: 1.08},
        "img_transfer": {1: 1.05},
        "local_transfer": {1: 0.97},
        "const_transfer": {1: 0.96},
        "unroll_ray": {2: 0.94, 4: 0.9, 8: 0.88, 16: 0.9},
        "img_left": {1: 1.07},
        "img_right": {1: 1.07},
        "local_left": {1: 0.97},
        "local_right": {1: 0.97},
        "unroll_disparity": {2: 0.92, 4: 0.88, 8: 0.86},
        "unroll_diff_x": {2: 0.96, 4: 0.94},
        "unroll_diff_y": {2: 0.97, 4: 0.95},
    },
    "gpu-a": {
        "wg_x": {1: 5.0, 2: 3.0, 4: 1.8, 8: 1.25, 16: 1.05, 32: 1.0, 64: 1.1, 128: 1.35},
        "wg_y": {1: 3.5, 2: 2.0, 4: 1.3, 8: 1.0, 16: 1.08, 32: 1.25, 64: 1.6, 128: 2.2},
        "ppt_x": {1: 1.6, 2: 1.15, 4: 1.0, 8: 1.1, 16: 1.35, 32: 1.8, 64: 2.6, 128: 4.0},
        "ppt_y": {1: 1.0, 2: 1.05, 4: 1.2, 8: 1.5, 16: 2.0, 32: 2.9, 64: 4.2, 128: 6.5},
        "use_image": {1: 0.92},
        "use_local": {1: 0.88},
        "padding": {1: 0.97},
        "interleaved": {1: 1.12},
        "unroll": {1: 0.93},
        "img_data": {1: 0.9},
        "img_transfer": {1: 0.95},
        "local_transfer": {1: 0.9},
        "const_transfer": {1: 0.85},
        "unroll_ray": {2: 0.93, 4: 0.88, 8: 0.9, 16: 1.0},
        "img_left": {1: 0.93},
        "img_right": {1: 0.93},
        "local_left": {1: 0.9},
        "local_right": {1: 0.9},
        "unroll_disparity": {2: 0.9, 4: 0.85, 8: 0.92},
        "unroll_diff_x": {2: 0.95, 4: 0.97},
        "unroll_diff_y": {2: 0.96, 4: 0.99},
    },
    "gpu-b": {
        "wg_x": {1: 6.0, 2: 3.2, 4: 1.9, 8: 1.35, 16: 1.12, 32: 1.0, 64: 0.93, 128: 1.0},
        "wg_y": {1: 2.2, 2: 1.25, 4: 1.0, 8: 1.05, 16: 1.2, 32: 1.45, 64: 1.9, 128: 2.6},
        "ppt_x": {1: 2.0, 2: 1.5, 4: 1.15, 8: 1.0, 16: 1.05, 32: 1.3, 64: 1.9, 128: 3.0},
        "ppt_y": {1: 1.1, 2: 1.0, 4: 1.1, 8: 1.35, 16: 1.75, 32: 2.4, 64: 3.5, 128: 5.2},
        "use_image": {1: 0.8},
        "use_local": {1: 1.05},
        "padding": {1: 0.95},
        "interleaved": {1: 0.88},
        "unroll": {1: 1.08},
        "img_data": {1: 0.82},
        "img_transfer": {1: 0.9},
        "local_transfer": {1: 1.02},
        "const_transfer": {1: 0.9},
        "unroll_ray": {2: 0.9, 4: 0.85, 8: 0.84, 16: 0.86},
        "img_left": {1: 0.85},
        "img_right": {1: 0.85},
        "local_left": {1: 1.03},
        "local_right": {1: 1.03},
        "unroll_disparity": {2: 1.05, 4: 1.1, 8: 1.15},
        "unroll_diff_x": {2: 1.02, 4: 1.05},
        "unroll_diff_y": {2: 1.02, 4: 1.06},
    },
}

# pairwise interactions: ((param, value), (param, value)) -> factor
_PAIR_FACTORS = {
    "cpu-like": {
        (("use_image", 1), ("use_local", 0)): 7.0,
        (("img_transfer", 1), ("const_transfer", 1)): 1.05,
        (("img_left", 1), ("local_left", 0)): 1.25,
        (("img_right", 1), ("local_right", 0)): 1.25,
    },
    "gpu-a": {
        (("use_image", 1), ("use_local", 1)): 1.15,
        (("use_local", 1), ("wg_x", 1)): 1.5,
        (("interleaved", 1), ("use_image", 1)): 0.85,
        (("wg_x", 128), ("ppt_x", 128)): 2.0,
        (("img_transfer", 1), ("const_transfer", 1)): 1.12,
        (("local_transfer", 1), ("wg_x", 1)): 1.4,
        (("img_left", 1), ("local_left", 1)): 1.1,
        (("img_right", 1), ("local_right", 1)): 1.1,
    },
    "gpu-b": {
        (("use_image", 1), ("use_local", 1)): 1.25,
        (("use_image", 0), ("interleaved", 0)): 1.2,
        (("wg_x", 128), ("ppt_x", 128)): 2.2,
        (("img_data", 1), ("img_transfer", 1)): 1.08,
        (("img_left", 1), ("img_right", 0)): 1.1,
        (("local_left", 1), ("wg_x", 1)): 1.3,
    },
}


def _constraint_rules(profile: str, space: ParamSpace) -> list[ValidityRule]:
    names = set(space.param_names())
    rules: list[ValidityRule] = []
    if {"wg_x", "wg_y"} <= names:
        bound = MAX_WORK_GROUP_CPU if profile == "cpu-like" else MAX_WORK_GROUP_GPU
        rules.append(ValidityRule("max-product", ("wg_x", "wg_y"), bound=bound))
    if profile != "cpu-like":
        # a tile row cached in local memory must fit the local-memory budget
        for dim in ("x", "y"):
            if {f"wg_{dim}", f"ppt_{dim}"} <= names:
                rules.append(
                    ValidityRule(
                        "max-product",
                        (f"wg_{dim}", f"ppt_{dim}"),
                        coefficients=(_BYTES_PER_PIXEL, 1),
                        bound=MAX_LOCAL_BYTES,
                    )
                )
    return rules


def builtin_surrogate(
    profile: str,
    space: ParamSpace,
    noise_cv: float = 0.05,
    seed: int | None = None,
) -> SurrogateSpec:
    """Instantiate a bundled device profile for a parameter space.

    Only terms whose parameters (and values) exist in the space are
    emitted, so profiles apply to the built-in spaces and to reduced
    variants of them alike.
    """
    if profile not in PROFILE_NAMES:
        raise ValueError(f"unknown surrogate profile {profile!r}; "
                         f"expected one of {PROFILE_NAMES}")
    values_of = {p.name: set(p.values) for p in space.params}
    terms: list[SurrogateTerm] = []
    for pname, table in _FACTORS[profile].items():
        if pname not in values_of:
            continue
        for value, factor in table.items():
            if value in values_of[pname] and factor != 1.0:
                terms.append(SurrogateTerm((pname,), (value,), factor))
    for ((p1, v1), (p2, v2)), factor in _PAIR_FACTORS[profile].items():
        if p1 in values_of and p2 in values_of:
            if v1 in values_of[p1] and v2 in values_of[p2] and factor != 1.0:
                terms.append(SurrogateTerm((p1, p2), (v1, v2), factor))
    return SurrogateSpec(
        base_time=_BASE_TIMES[profile],
        terms=tuple(terms),
        noise_cv=noise_cv,
        invalid_rules=tuple(_constraint_rules(profile, space)),
        seed=_PROFILE_SEEDS[profile] if seed is None else seed,
    )
