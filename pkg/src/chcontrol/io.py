"""CSV/JSON writers and the run manifest.

Floats are written with ``repr`` precision and JSON with sorted keys so that
identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .adjoint import AdjointTrajectory, final_residual
from .grid import Grid, dual_norm, mean


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_field(path, values, grid: Grid, index=None) -> Path:
    """One row per vertex: index, coordinates, value."""
    values = np.asarray(values, dtype=float)
    index = np.arange(values.size) if index is None else np.asarray(index)
    coords = grid.coords[index]
    dims = ["x", "y"][: coords.shape[1]]
    rows = ([int(i), *c, v] for i, c, v in zip(index, coords, values))
    return write_table(path, ["index", *dims, "value"], rows)


def write_grid(path, grid: Grid) -> Path:
    return write_json(path, grid.to_descriptor())


def write_diagnostics(path, traj) -> Path:
    d = traj.diagnostics
    cols = ["t", "mass", "energy", "newton_iters", "min_y", "max_y"]
    return write_table(path, cols, zip(*(d[c] for c in cols)))


def write_adjoint_diagnostics(path, adj: AdjointTrajectory, grid: Grid) -> Path:
    """Columns ``t, dual_norm_q, norm_q_gamma, final_residual``; the last is the value at ``T``."""
    fin = final_residual(adj, grid)
    rows = []
    for t, qk, qg in zip(adj.times, adj.q, adj.q_gamma):
        rows.append([t, dual_norm(qk - mean(qk, grid), grid), math.sqrt(grid.boundary_weights @ qg**2), fin])
    return write_table(path, ["t", "dual_norm_q", "norm_q_gamma", "final_residual"], rows)


def write_optimization_log(path, records) -> Path:
    cols = ["iter", "J", "step", "stationarity", "vi_residual"]
    return write_table(path, cols, ([r[c] for c in cols] for r in records))


def write_control(path, u, times) -> Path:
    u = np.asarray(u, dtype=float)
    header = ["t"] + [f"u{j}" for j in range(u.shape[1])]
    return write_table(path, header, ([t, *row] for t, row in zip(times, u)))


def git_blob_hash(data: bytes) -> str:
    """Content hash in the format git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def write_manifest(out_dir, command: str, config_text: str, seed, files, status: dict) -> Path:
    """Record the config hash and content hashes of every output file."""
    out_dir = Path(out_dir)
    entries = {}
    for f in sorted(Path(p) for p in files):
        entries[f.relative_to(out_dir).as_posix()] = git_blob_hash(f.read_bytes())
    manifest = {
        "command": command,
        "config_sha256": config_hash(config_text),
        "seed": seed,
        "outputs": entries,
        "status": status,
    }
    return write_json(out_dir / "manifest.json", manifest)
