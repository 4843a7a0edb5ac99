"""JSON model files, field files and result serialization.

Model file::

    {"n_states": 3,
     "rates": [[0, 1, "1"], [1, 0, 1.0], ...],
     "labels": ["a", "b", "c"],
     "A": [0], "B": [2]}

Rates may be JSON numbers or decimal strings; :func:`emit_model` writes
17-significant-digit strings so that loading gives back the same
doubles.  Non-finite numbers in outputs are written as the strings
``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DuplicateRateEntry, JumpPathError, ParseError
from .kernel import RateKernel


@dataclass(frozen=True)
class Model:
    kernel: RateKernel
    A: frozenset[int] = frozenset()
    B: frozenset[int] = frozenset()


def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _number(value, where: str, *, allow_inf: bool = False) -> float:
    if isinstance(value, bool):
        raise ParseError(f"{where}: expected a number, got a boolean")
    if isinstance(value, str):
        try:
            x = float(value)
        except ValueError:
            raise ParseError(f"{where}: cannot parse {value!r} as a number") from None
    elif isinstance(value, (int, float)):
        x = float(value)
    else:
        raise ParseError(f"{where}: expected a number, got {type(value).__name__}")
    if math.isnan(x) or (math.isinf(x) and not (allow_inf and x > 0)):
        raise ParseError(f"{where}: {value!r} is not allowed here")
    return x


def _index(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{where}: expected an integer state index, got {value!r}")
    return value


def parse_model(obj, source: str = "<model>") -> Model:
    """Build a :class:`Model` from decoded JSON, reporting the offending field."""
    if not isinstance(obj, dict):
        raise ParseError(f"{source}: top level must be an object")
    if "n_states" not in obj:
        raise ParseError(f"{source}: missing field 'n_states'")
    n = obj["n_states"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ParseError(f"{source}: field 'n_states' must be a positive integer")
    raw = obj.get("rates", [])
    if not isinstance(raw, list):
        raise ParseError(f"{source}: field 'rates' must be a list of [x, y, rate] triplets")
    triplets, seen = [], {}
    for i, t in enumerate(raw):
        where = f"{source}: rates[{i}]"
        if not isinstance(t, list) or len(t) != 3:
            raise ParseError(f"{where}: expected [x, y, rate]")
        x, y = _index(t[0], where + "[0]"), _index(t[1], where + "[1]")
        r = _number(t[2], where + "[2]")
        if (x, y) in seen:
            raise DuplicateRateEntry(f"{where}: pair ({x}, {y}) already given at rates[{seen[x, y]}]")
        seen[x, y] = i
        triplets.append((x, y, r))
    labels = obj.get("labels")
    if labels is not None and (not isinstance(labels, list) or len(labels) != n):
        raise ParseError(f"{source}: field 'labels' must list one name per state")
    try:
        k = RateKernel.from_triplets(n, triplets, labels)
    except JumpPathError as exc:
        raise type(exc)(f"{source}: {exc}") from exc
    sets = {}
    for key in ("A", "B"):
        members = obj.get(key, [])
        if not isinstance(members, list):
            raise ParseError(f"{source}: field '{key}' must be a list of states")
        sets[key] = frozenset(_index(m, f"{source}: {key}[{j}]") for j, m in enumerate(members))
    return Model(k, sets["A"], sets["B"])


def load_model(path) -> Model:
    return parse_model(_read_json(path), str(path))


def model_dict(k: RateKernel, A=(), B=()) -> dict:
    out = {"n_states": k.n_states,
           "rates": [[x, y, format(r, ".17g")] for x, y, r in k.to_triplets()]}
    if k.labels is not None:
        out["labels"] = list(k.labels)
    if A:
        out["A"] = sorted(int(a) for a in A)
    if B:
        out["B"] = sorted(int(b) for b in B)
    return out


def emit_model(k: RateKernel, path=None, A=(), B=()) -> dict:
    """Model file contents for ``k``; written to ``path`` when given."""
    out = model_dict(k, A, B)
    if path is not None:
        write_json(path, out)
    return out


def load_field(path, n_states: int, key: str | None = None, *, allow_inf: bool = False) -> np.ndarray:
    """A per-state field stored as a list or under ``key`` in an object."""
    obj = _read_json(path)
    if isinstance(obj, dict):
        if key is None or key not in obj:
            raise ParseError(f"{path}: missing field {key!r}")
        obj, where = obj[key], f"{path}: {key}"
    else:
        where = str(path)
    if not isinstance(obj, list) or len(obj) != n_states:
        raise ParseError(f"{where}: expected a list of {n_states} numbers")
    return np.array([_number(v, f"{where}[{i}]", allow_inf=allow_inf) for i, v in enumerate(obj)])


def load_distribution(path, n_states: int) -> np.ndarray | int:
    """An initial law: a list of weights, ``{"mu": [...]}`` or ``{"state": x}``."""
    obj = _read_json(path)
    if isinstance(obj, dict) and "state" in obj:
        return _index(obj["state"], f"{path}: state")
    return load_field(path, n_states, "mu")


def to_jsonable(obj):
    """Recursively convert numpy values; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, (frozenset, set)):
        return sorted(to_jsonable(v) for v in obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
