"""Deterministic JSON emission with lossless float formatting."""

from __future__ import annotations

import json
import math


def dumps_17g(obj) -> str:
    """JSON text with floats rendered to 17 significant digits.

    17 digits round-trip any double exactly, so files written this way
    reload bit-identically.
    """
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("cannot serialize non-finite float")
        return format(obj, ".17g")
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps_17g(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ", ".join(
            f"{json.dumps(k)}: {dumps_17g(v)}" for k, v in obj.items()
        ) + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")
