"""Delimited-text data files, JSON summaries and flat key=value configs.

Data files carry ``# key=value`` metadata lines, one header row naming the
columns and comma-separated rows.  Numbers are written with 17 significant
digits so a file re-parses to the exact doubles that produced it, and no
timestamps are written, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError

SUMMARY_SCHEMA_VERSION = 1


def _fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _meta_value(v) -> str:
    if isinstance(v, float):
        return _fmt(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_meta_value(x) for x in v)
    text = str(v)
    if "\n" in text:
        raise ValueError("metadata values must fit on one line")
    return text


def write_table(path, columns: dict, meta: dict | None = None) -> Path:
    """Write equal-length columns as CSV with a metadata preamble."""
    path = Path(path)
    names = list(columns)
    if not names:
        raise ValueError("a table needs at least one column")
    for n in names:
        if "," in n or not n:
            raise ValueError(f"bad column name {n!r}")
    arrays = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    size = arrays[0].size
    if any(a.size != size for a in arrays):
        raise ValueError("columns must have equal length")
    lines = [f"# {k}={_meta_value(v)}" for k, v in sorted((meta or {}).items())]
    lines.append(",".join(names))
    for row in zip(*arrays):
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_table(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_table`: returns (metadata strings, columns)."""
    meta: dict = {}
    header = None
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(x) for x in line.split(",")])
    if header is None:
        raise ValueError(f"{path}: no header row")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return meta, {name: data[:, i].copy() for i, name in enumerate(header)}


# ---------------------------------------------------------------------------
# evolution output


def write_snapshot(path, state, grid, params=None) -> Path:
    from .evolver import ModelParams, energy_density

    params = params or ModelParams()
    rho = energy_density(state, grid, params)
    return write_table(path, {"r": grid.radii, "chi": state.chi, "pi": state.pi, "rho": rho},
                       {"t": float(state.t)})


def read_snapshot(path):
    """Snapshot file to (t, r, chi, pi, rho)."""
    meta, cols = read_table(path)
    return float(meta["t"]), cols["r"], cols["chi"], cols["pi"], cols["rho"]


def series_columns(record) -> dict:
    cols = {"t": record.times, "E": record.energy, "central_density": record.central_density,
            "chi_range": record.chi_range}
    for j, r in enumerate(record.probe_radii):
        cols[f"chi_at_{r:.6g}"] = record.probes[:, j]
    cols["E_inner"] = record.energy_inner
    cols["centroid"] = record.centroid
    return cols


def write_record(out_dir, run_id: str, record) -> list[Path]:
    """``<run_id>_series.csv`` plus one ``<run_id>_snap_<i>.csv`` per snapshot."""
    out_dir = Path(out_dir)
    meta = {"halt_reason": record.halt_reason, "halt_time": record.halt_time}
    if record.outcome is not None:
        meta["verdict"] = record.outcome.verdict
    files = [write_table(out_dir / f"{run_id}_series.csv", series_columns(record), meta)]
    for i, s in enumerate(record.snapshots):
        files.append(write_snapshot(out_dir / f"{run_id}_snap_{i}.csv", s, record.grid,
                                    record.params))
    return files


# ---------------------------------------------------------------------------
# profiles and modes


def write_profile(path, coordinate: str, x, values, meta: dict) -> Path:
    """Two-column export (z or r, value) with the defining parameters."""
    return write_table(path, {coordinate: x, "value": values}, meta)


def read_profile(path):
    meta, cols = read_table(path)
    coord = next(k for k in cols if k != "value")
    return meta, coord, cols[coord], cols["value"]


# ---------------------------------------------------------------------------
# summaries


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def write_summary(path, summary: dict) -> Path:
    """JSON with sorted keys and the schema version stamped in."""
    body = dict(summary)
    body["schema_version"] = SUMMARY_SCHEMA_VERSION
    path = Path(path)
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def read_summary(path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {data.get('schema_version')!r}")
    return data


# ---------------------------------------------------------------------------
# config text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; later keys win."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        out[key] = value.strip()
    return out


def format_config(values: dict) -> str:
    """Render a config mapping so that :func:`parse_config_text` reads it back."""
    lines = []
    for k in sorted(values):
        v = values[k]
        if v is None:
            text = "none"
        elif isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, float):
            text = _fmt(v)
        elif isinstance(v, (list, tuple)):
            text = ",".join(_fmt(x) if isinstance(x, float) else str(x) for x in v)
        else:
            text = str(v)
        lines.append(f"{k} = {text}")
    return "\n".join(lines) + "\n"
