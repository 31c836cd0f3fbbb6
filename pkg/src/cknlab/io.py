"""Field files, reports, sweep CSV and plot data.

Every float is written with 17 significant digits (``'.16e'``), so a write
followed by a read reproduces the stored array bit for bit.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
from pathlib import Path

import numpy as np

from .cylinder import Field, Grid, make_params

__all__ = [
    "FieldFileError",
    "SWEEP_HEADER",
    "dumps",
    "field_to_dict",
    "field_from_dict",
    "write_field",
    "read_field",
    "write_json",
    "sweep_csv",
    "write_sweep_csv",
    "plot_data",
    "write_plot_data",
    "load_json",
    "output_dir",
]

SWEEP_HEADER = ("beta", "R", "q_r", "f_dual", "dist", "nu_ok", "regime",
                "alpha1", "alpha2", "s1", "s2", "beta1", "beta2")
_PARAM_TOL = 1e-12


class FieldFileError(ValueError):
    """A field file could not be parsed or does not describe a valid field."""


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".16e")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with floats at 17 significant digits and sorted keys.

    Lists of plain numbers are written on one line.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if hasattr(obj, "value"):  # enums
        return dumps(obj.value, indent, _level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def field_to_dict(f: Field) -> dict:
    g = f.grid
    p = g.params
    return {
        "params": {"d": p.d, "p": p.p, "a": p.a, "b": p.b, "lambda_fs": p.lambda_fs},
        "grid": {"t_min": g.t_min, "t_max": g.t_max, "n_t": g.n_t,
                 "max_mode": g.max_mode, "n_phi": g.n_phi, "d": p.d,
                 "fd_order": g.fd_order},
        "modes": np.asarray(f.modes),
    }


def _require(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise FieldFileError(f"missing key '{key}' in {where}")
    return doc[key]


def field_from_dict(doc: dict) -> Field:
    """Rebuild a field; the stored parameters must match ``make_params(d, p)``."""
    params_doc = _require(doc, "params", "field file")
    grid_doc = _require(doc, "grid", "field file")
    modes = _require(doc, "modes", "field file")
    try:
        params = make_params(int(_require(params_doc, "d", "params")),
                             float(_require(params_doc, "p", "params")))
        for key in ("a", "b", "lambda_fs"):
            stored = float(_require(params_doc, key, "params"))
            if abs(stored - getattr(params, key)) > _PARAM_TOL * max(1.0, abs(stored)):
                raise FieldFileError(f"params.{key}={stored!r} inconsistent with d, p")
        if int(_require(grid_doc, "d", "grid")) != params.d:
            raise FieldFileError("grid.d differs from params.d")
        grid = Grid(params=params,
                    t_min=float(_require(grid_doc, "t_min", "grid")),
                    t_max=float(_require(grid_doc, "t_max", "grid")),
                    n_t=int(_require(grid_doc, "n_t", "grid")),
                    max_mode=int(_require(grid_doc, "max_mode", "grid")),
                    n_phi=int(_require(grid_doc, "n_phi", "grid")),
                    fd_order=int(grid_doc.get("fd_order", 4)))
        arr = np.array(modes, dtype=float)
    except FieldFileError:
        raise
    except (TypeError, ValueError) as exc:
        raise FieldFileError(f"invalid field file: {exc}") from exc
    if arr.shape != (grid.n_modes, grid.n_t):
        raise FieldFileError(f"modes has shape {arr.shape}, expected {(grid.n_modes, grid.n_t)}")
    if not np.all(np.isfinite(arr)):
        raise FieldFileError("modes contain non-finite values")
    return Field(grid, arr)


def _write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_field(f: Field, path) -> Path:
    return _write_text(path, dumps(field_to_dict(f)) + "\n")


def load_json(path) -> object:
    """Parse a JSON file; syntax errors become FieldFileError with line and column."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FieldFileError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FieldFileError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def read_field(path) -> Field:
    return field_from_dict(load_json(path))


def write_json(obj, path) -> Path:
    return _write_text(path, dumps(obj) + "\n")


def _pad2(values) -> list:
    values = list(values)[:2]
    return values + [float("nan")] * (2 - len(values))


def sweep_csv(records) -> str:
    """CSV text for sweep records; failed rows carry regime ``failed`` and NaNs."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in records:
        ok = r.error is None
        nums = [r.beta, r.R, r.q_r,
                r.f_dual if ok else float("nan"), r.dist if ok else float("nan")]
        tail = (_pad2(r.alphas_recovered) + _pad2(r.centers_recovered)
                + _pad2(r.betas_recovered)) if ok else [float("nan")] * 6
        regime = getattr(r.regime, "value", r.regime) if ok else "failed"
        writer.writerow([_num(x) for x in nums]
                        + ["true" if ok and r.nu_ok else "false", regime]
                        + [_num(x) for x in tail])
    return buf.getvalue()


def write_sweep_csv(records, path) -> Path:
    return _write_text(path, sweep_csv(records))


def plot_data(records, x: str, y: str) -> str:
    """Two columns ``log10 x  log10 y`` for the successful records, sorted by x."""
    pts = sorted((float(getattr(r, x)), float(getattr(r, y)))
                 for r in records if r.error is None)
    lines = [f"# log10({x}) log10({y})"]
    lines += [f"{_num(math.log10(a))} {_num(math.log10(b))}"
              for a, b in pts if a > 0 and b > 0]
    return "\n".join(lines) + "\n"


def write_plot_data(records, x: str, y: str, path) -> Path:
    return _write_text(path, plot_data(records, x, y))


def output_dir(default) -> Path:
    """``CKNLAB_OUTPUT_DIR`` if set, else ``default``."""
    return Path(os.environ.get("CKNLAB_OUTPUT_DIR") or default)
