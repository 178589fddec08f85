"""Finite tuning-parameter spaces.

A space is an ordered list of named parameters, each with a finite value
list. Configurations are positional value tuples. Spaces are indexed in
mixed radix with the last parameter varying fastest, which gives a cheap
bijection between [0, cardinality) and the full Cartesian product without
ever materializing it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigMismatchError, ParseError
from .rng import make_rng

Configuration = tuple[int, ...]

BUILTIN_SPACE_NAMES = ("convolution", "raycasting", "stereo")

RULE_MAX_PRODUCT = "max-product"
RULE_MAX_WEIGHTED_SUM = "max-weighted-sum"
RULE_FORBIDDEN = "forbidden-combination"
_RULE_KINDS = (RULE_MAX_PRODUCT, RULE_MAX_WEIGHTED_SUM, RULE_FORBIDDEN)

# Above this cardinality, sampling switches from a full permutation to
# rejection against a seen-set.
_PERMUTATION_LIMIT = 1 << 22


@dataclass(frozen=True)
class ParamDef:
    """One tuning parameter: a name and its ordered admissible values."""

    name: str
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if not self.values:
            raise ValueError(f"parameter {self.name!r} has an empty value list")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"parameter {self.name!r} has duplicate values")


@dataclass(frozen=True)
class ValidityRule:
    """Declarative static constraint over a configuration.

    Kinds:
      max-product       product of coefficient*value over operands <= bound
      max-weighted-sum  sum of coefficient*value over operands <= bound
      forbidden-combination  configuration is invalid when every operand
                        equals its entry in ``coefficients`` (which holds
                        the banned values; ``bound`` is unused)
    """

    kind: str
    operands: tuple[str, ...]
    coefficients: tuple[int, ...] = ()
    bound: int = 0

    def __post_init__(self):
        if self.kind not in _RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        object.__setattr__(self, "operands", tuple(self.operands))
        coeffs = tuple(int(c) for c in self.coefficients)
        if not coeffs and self.kind != RULE_FORBIDDEN:
            coeffs = (1,) * len(self.operands)
        if len(coeffs) != len(self.operands):
            raise ValueError(
                f"rule {self.kind} has {len(self.operands)} operands but "
                f"{len(coeffs)} coefficients"
            )
        object.__setattr__(self, "coefficients", coeffs)

    def is_satisfied(self, assignment: Mapping[str, int]) -> bool:
        vals = [assignment[p] for p in self.operands]
        if self.kind == RULE_MAX_PRODUCT:
            return math.prod(c * v for c, v in zip(self.coefficients, vals)) <= self.bound
        if self.kind == RULE_MAX_WEIGHTED_SUM:
            return sum(c * v for c, v in zip(self.coefficients, vals)) <= self.bound
        return any(v != c for c, v in zip(self.coefficients, vals))

    def satisfied_mask(self, columns: Sequence[np.ndarray]) -> np.ndarray:
        """Vectorized is_satisfied over per-operand value columns."""
        if self.kind == RULE_MAX_PRODUCT:
            acc = np.ones_like(columns[0], dtype=np.int64)
            for c, col in zip(self.coefficients, columns):
                acc = acc * (c * col)
            return acc <= self.bound
        if self.kind == RULE_MAX_WEIGHTED_SUM:
            acc = np.zeros_like(columns[0], dtype=np.int64)
            for c, col in zip(self.coefficients, columns):
                acc = acc + c * col
            return acc <= self.bound
        hit = np.ones_like(columns[0], dtype=bool)
        for c, col in zip(self.coefficients, columns):
            hit &= col == c
        return ~hit


@dataclass(frozen=True)
class ParamSpace:
    """An ordered set of parameters plus static validity rules."""

    name: str
    params: tuple[ParamDef, ...]
    rules: tuple[ValidityRule, ...] = ()
    _ranks: tuple[dict, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "rules", tuple(self.rules))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"space {self.name!r} has duplicate parameter names")
        known = set(names)
        for rule in self.rules:
            missing = [p for p in rule.operands if p not in known]
            if missing:
                raise ValueError(
                    f"rule {rule.kind} references unknown parameters {missing}"
                )
        ranks = tuple({v: i for i, v in enumerate(p.values)} for p in self.params)
        object.__setattr__(self, "_ranks", ranks)

    # -- indexing ---------------------------------------------------------

    def cardinality(self) -> int:
        return math.prod(len(p.values) for p in self.params)

    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    def param_index(self, name: str) -> int:
        for i, p in enumerate(self.params):
            if p.name == name:
                return i
        raise KeyError(f"no parameter {name!r} in space {self.name!r}")

    def config_at(self, index: int) -> Configuration:
        """Mixed-radix decode; the last parameter varies fastest."""
        card = self.cardinality()
        if not 0 <= index < card:
            raise IndexError(f"index {index} out of range for {card} configurations")
        out = []
        for p in reversed(self.params):
            index, digit = divmod(index, len(p.values))
            out.append(p.values[digit])
        return tuple(reversed(out))

    def index_of(self, config: Configuration) -> int:
        """Inverse of config_at."""
        self.validate_config(config)
        idx = 0
        for p, ranks, v in zip(self.params, self._ranks, config):
            idx = idx * len(p.values) + ranks[v]
        return idx

    def validate_config(self, config: Configuration) -> None:
        """Raise ConfigMismatchError unless config belongs to this space."""
        if len(config) != len(self.params):
            raise ConfigMismatchError(
                f"configuration has {len(config)} values, space {self.name!r} "
                f"has {len(self.params)} parameters"
            )
        for p, ranks, v in zip(self.params, self._ranks, config):
            if v not in ranks:
                raise ConfigMismatchError(
                    f"value {v} is not admissible for parameter {p.name!r}"
                )

    def to_dict(self, config: Configuration) -> dict[str, int]:
        return dict(zip(self.param_names(), config))

    def decode_indices(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized config_at: (n,) indices -> (n, n_params) value matrix."""
        idx = np.asarray(indices, dtype=np.int64)
        out = np.empty((idx.shape[0], len(self.params)), dtype=np.int64)
        rem = idx.copy()
        for col in range(len(self.params) - 1, -1, -1):
            values = np.asarray(self.params[col].values, dtype=np.int64)
            rem, digit = np.divmod(rem, len(values))
            out[:, col] = values[digit]
        return out

    # -- validity ---------------------------------------------------------

    def is_statically_valid(self, config: Configuration) -> bool:
        self.validate_config(config)
        return self.rules_satisfied(self.rules, config)

    def static_valid_mask(self, value_matrix: np.ndarray) -> np.ndarray:
        """Vectorized is_statically_valid over a (n, n_params) value matrix."""
        return self.rules_mask(self.rules, value_matrix)

    def rules_mask(
        self, rules: Iterable[ValidityRule], value_matrix: np.ndarray
    ) -> np.ndarray:
        """Mask of rows satisfying every rule in an arbitrary rule list."""
        mask = np.ones(value_matrix.shape[0], dtype=bool)
        for rule in rules:
            cols = [value_matrix[:, self.param_index(p)] for p in rule.operands]
            mask &= rule.satisfied_mask(cols)
        return mask

    def rules_satisfied(
        self, rules: Iterable[ValidityRule], config: Configuration
    ) -> bool:
        assignment = self.to_dict(config)
        return all(rule.is_satisfied(assignment) for rule in rules)

    # -- sampling ---------------------------------------------------------

    def sample_random(self, n: int, seed: int) -> list[Configuration]:
        """Draw n distinct configurations uniformly, reproducibly by seed."""
        card = self.cardinality()
        if n > card:
            raise ValueError(f"cannot sample {n} distinct configs from {card}")
        return [self.config_at(int(i)) for i in self.sample_indices(n, seed)]

    def sample_indices(self, n: int, seed: int) -> np.ndarray:
        card = self.cardinality()
        if n > card:
            raise ValueError(f"cannot sample {n} distinct configs from {card}")
        stream = self.iter_random_indices(seed)
        return np.fromiter((next(stream) for _ in range(n)), dtype=np.int64, count=n)

    def iter_random_indices(self, seed: int):
        """Seeded stream of distinct uniform configuration indices.

        The stream is prefix-stable: consuming more of it never changes
        the earlier elements, so disjoint subsets can be carved out of one
        seed deterministically.
        """
        card = self.cardinality()
        rng = make_rng(seed)
        if card <= _PERMUTATION_LIMIT:
            yield from (int(i) for i in rng.permutation(card))
            return
        seen: set[int] = set()
        while len(seen) < card:
            for i in rng.integers(0, card, size=4096):
                i = int(i)
                if i not in seen:
                    seen.add(i)
                    yield i


# -- module-level operation aliases -------------------------------------


def cardinality(space: ParamSpace) -> int:
    return space.cardinality()


def config_at_index(space: ParamSpace, index: int) -> Configuration:
    return space.config_at(index)


def index_of_config(space: ParamSpace, config: Configuration) -> int:
    return space.index_of(config)


def sample_random(space: ParamSpace, n: int, seed: int) -> list[Configuration]:
    return space.sample_random(n, seed)


def is_statically_valid(space: ParamSpace, config: Configuration) -> bool:
    return space.is_statically_valid(config)


# -- built-in spaces ------------------------------------------------------

_POW2 = (1, 2, 4, 8, 16, 32, 64, 128)
_FLAG = (0, 1)


def _common_params() -> list[ParamDef]:
    return [
        ParamDef("wg_x", _POW2),
        ParamDef("wg_y", _POW2),
        ParamDef("ppt_x", _POW2),
        ParamDef("ppt_y", _POW2),
    ]


def builtin_space(name: str) -> ParamSpace:
    """One of the three benchmark parameterizations shipped with the tool.

    All share work-group and pixels-per-thread sizes in x/y; each adds its
    own memory-placement flags and unroll factors.
    """
    params = _common_params()
    if name == "convolution":
        params += [
            ParamDef("use_image", _FLAG),
            ParamDef("use_local", _FLAG),
            ParamDef("padding", _FLAG),
            ParamDef("interleaved", _FLAG),
            ParamDef("unroll", _FLAG),
        ]
    elif name == "raycasting":
        params += [
            ParamDef("img_data", _FLAG),
            ParamDef("img_transfer", _FLAG),
            ParamDef("local_transfer", _FLAG),
            ParamDef("const_transfer", _FLAG),
            ParamDef("interleaved", _FLAG),
            ParamDef("unroll_ray", (1, 2, 4, 8, 16)),
        ]
    elif name == "stereo":
        params += [
            ParamDef("img_left", _FLAG),
            ParamDef("img_right", _FLAG),
            ParamDef("local_left", _FLAG),
            ParamDef("local_right", _FLAG),
            ParamDef("unroll_disparity", (1, 2, 4, 8)),
            ParamDef("unroll_diff_x", (1, 2, 4)),
            ParamDef("unroll_diff_y", (1, 2, 4)),
        ]
    else:
        raise ValueError(
            f"unknown built-in space {name!r}; expected one of {BUILTIN_SPACE_NAMES}"
        )
    return ParamSpace(name=name, params=tuple(params))


def builtin_space_path(name: str) -> Path:
    """Path of the bundled JSON definition for a built-in space."""
    if name not in BUILTIN_SPACE_NAMES:
        raise ValueError(f"unknown built-in space {name!r}")
    return Path(str(resources.files("mltune").joinpath(f"data/spaces/{name}.json")))


# -- persistence ----------------------------------------------------------


def space_to_json(space: ParamSpace) -> dict:
    return {
        "name": space.name,
        "params": [{"name": p.name, "values": list(p.values)} for p in space.params],
        "rules": [
            {
                "kind": r.kind,
                "operands": list(r.operands),
                "coefficients": list(r.coefficients),
                "bound": r.bound,
            }
            for r in space.rules
        ],
    }


def space_from_json(doc: dict, source="<json>") -> ParamSpace:
    try:
        params = tuple(
            ParamDef(p["name"], tuple(p["values"])) for p in doc["params"]
        )
        rules = tuple(
            ValidityRule(
                kind=r["kind"],
                operands=tuple(r["operands"]),
                coefficients=tuple(r.get("coefficients", ())),
                bound=int(r.get("bound", 0)),
            )
            for r in doc.get("rules", ())
        )
        return ParamSpace(name=doc["name"], params=params, rules=rules)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad space definition: {exc}", path=source) from exc


def save_space(space: ParamSpace, path) -> None:
    Path(path).write_text(json.dumps(space_to_json(space), indent=2) + "\n")


def load_space(path) -> ParamSpace:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}", path=path) from exc
    return space_from_json(doc, source=path)


def resolve_space(name_or_path: str) -> ParamSpace:
    """Interpret a CLI-style space argument: built-in name or JSON file."""
    if name_or_path in BUILTIN_SPACE_NAMES:
        return builtin_space(name_or_path)
    return load_space(name_or_path)
