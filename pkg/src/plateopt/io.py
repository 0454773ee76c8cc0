"""Run artifacts: trace CSV, metadata JSON and legacy-text VTK."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .mesh import TriMesh

TRACE_HEADER = ("iter", "eigenvalue", "delta_rho_l2", "step_kind")
VTK_TRIANGLE = 5


def write_trace(records, path) -> None:
    # repr gives the shortest round-tripping float, so replays compare byte for byte
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in records:
            w.writerow([r.iter, repr(float(r.eigenvalue)), repr(float(r.delta_rho_l2)), r.step_kind])


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["iter"] = int(row["iter"])
        row["eigenvalue"] = float(row["eigenvalue"])
        row["delta_rho_l2"] = float(row["delta_rho_l2"])
    return rows


def write_metadata(meta: dict, path) -> None:
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_vtk(path, mesh: TriMesh, density=None, point_values=None, title="plateopt") -> None:
    """Legacy ASCII unstructured grid with optional cell and point scalars.

    ``density`` (one value per triangle) is written as cell data named
    ``density``; ``point_values`` (one per vertex) as point data named
    ``eigenfunction``.
    """
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {nv} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_TRIANGLE)] * nt
    if density is not None:
        vals = np.asarray(getattr(density, "values", density), dtype=float)
        if vals.shape != (nt,):
            raise ValueError(f"density needs {nt} values, got {vals.shape}")
        lines += [f"CELL_DATA {nt}", "SCALARS density double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    if point_values is not None:
        vals = np.asarray(point_values, dtype=float)
        if vals.shape != (nv,):
            raise ValueError(f"point data needs {nv} values, got {vals.shape}")
        lines += [f"POINT_DATA {nv}", "SCALARS eigenfunction double 1", "LOOKUP_TABLE default"]
        lines += [repr(v) for v in vals.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_summary(path) -> dict:
    """Section counts and scalar names of a file written by :func:`write_vtk`."""
    out = {"points": None, "cells": None, "cell_types": [], "cell_scalars": [], "point_scalars": []}
    section = None
    tokens = Path(path).read_text().split("\n")
    i = 0
    while i < len(tokens):
        parts = tokens[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            out["points"] = int(parts[1])
            i += out["points"]
        elif key == "CELLS":
            out["cells"] = int(parts[1])
            i += out["cells"]
        elif key == "CELL_TYPES":
            n = int(parts[1])
            out["cell_types"] = sorted({int(t) for t in tokens[i + 1:i + 1 + n]})
            i += n
        elif key in ("CELL_DATA", "POINT_DATA"):
            section = "cell_scalars" if key == "CELL_DATA" else "point_scalars"
        elif key == "SCALARS":
            out[section].append(parts[1])
        i += 1
    return out
