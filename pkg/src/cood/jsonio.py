"""Byte-deterministic JSON emission for score files and reports."""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import DataError


def fmt_float(v: float) -> str:
    """Format with 9 significant digits; identical inputs give identical bytes."""
    if not math.isfinite(v):
        raise DataError(f"cannot serialize non-finite value {v!r}")
    return format(float(v), ".9g")


def canonical_json(obj: Any, indent: int = 0) -> str:
    """JSON with insertion-order keys and ``fmt_float`` floats."""
    pad = " " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f"{pad}  {json.dumps(str(k))}: {canonical_json(v, indent + 2)}"
            for k, v in obj.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ",\n".join(f"{pad}  {canonical_json(v, indent + 2)}" for v in obj)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    raise DataError(f"cannot serialize {type(obj).__name__} canonically")
