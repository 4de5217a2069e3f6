"""File I/O: XYZ and ASCII PLY cloud loading, JSON result documents."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .core import PointCloud
from .errors import ParseError, UnsupportedFormat


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Load a point cloud with unit masses from an XYZ or ASCII PLY file.

    The format is inferred from the extension when not given. PLY intensity
    properties are min-max rescaled to [0, 1].
    """
    path = Path(path)
    fmt = format or path.suffix.lstrip(".").lower()
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply":
        return _load_ply(path)
    raise UnsupportedFormat(f"unsupported cloud format {fmt!r} (use ply or xyz)")


def _load_xyz(path: Path) -> PointCloud:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.replace(",", " ").split()
            if len(fields) < 2 or len(fields) > 3:
                raise ParseError(f"expected 2 or 3 coordinates, got {len(fields)}",
                                 path=str(path), line=ln)
            try:
                rows.append([float(f) for f in fields])
            except ValueError as e:
                raise ParseError(f"bad coordinate: {e}", path=str(path), line=ln)
    if not rows:
        raise ParseError("file contains no points", path=str(path), line=0)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParseError("inconsistent coordinate count across lines",
                         path=str(path), line=0)
    return PointCloud.from_points(np.array(rows))


def _load_ply(path: Path) -> PointCloud:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic line", path=str(path), line=1)
    n_vertices = None
    properties = []  # names of vertex properties, in order
    in_vertex_element = False
    body_start = None
    ln = 1
    for ln, line in enumerate(lines[1:], start=2):
        tok = line.strip().split()
        if not tok:
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ascii PLY is supported", path=str(path), line=ln)
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(tok[2])
                except (IndexError, ValueError):
                    raise ParseError("bad vertex element count", path=str(path), line=ln)
        elif tok[0] == "property" and in_vertex_element:
            if len(tok) < 3:
                raise ParseError("malformed property line", path=str(path), line=ln)
            if tok[1] == "list":
                raise ParseError("list properties are not supported on vertices",
                                 path=str(path), line=ln)
            properties.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = ln
            break
    if body_start is None:
        raise ParseError("missing end_header", path=str(path), line=ln)
    if n_vertices is None:
        raise ParseError("header declares no vertex element", path=str(path), line=ln)
    for axis in ("x", "y", "z"):
        if axis not in properties:
            raise ParseError(f"vertex element lacks property {axis!r}",
                             path=str(path), line=body_start)
    cols = {name: properties.index(name) for name in properties}
    inten_col = cols.get("intensity")
    pts = np.empty((n_vertices, 3))
    inten = np.empty(n_vertices) if inten_col is not None else None
    for k in range(n_vertices):
        ln = body_start + 1 + k
        if ln > len(lines):
            raise ParseError(f"expected {n_vertices} vertices, file ends after "
                             f"{k}", path=str(path), line=len(lines))
        fields = lines[ln - 1].split()
        if len(fields) != len(properties):
            raise ParseError(f"expected {len(properties)} values, got {len(fields)}",
                             path=str(path), line=ln)
        try:
            pts[k, 0] = float(fields[cols["x"]])
            pts[k, 1] = float(fields[cols["y"]])
            pts[k, 2] = float(fields[cols["z"]])
            if inten is not None:
                inten[k] = float(fields[inten_col])
        except ValueError as e:
            raise ParseError(f"bad vertex value: {e}", path=str(path), line=ln)
    if inten is not None:
        span = inten.max() - inten.min()
        inten = (inten - inten.min()) / span if span > 0 else np.zeros(n_vertices)
    return PointCloud.from_points(pts, intensities=inten)


def save_cloud_xyz(path, cloud: PointCloud) -> None:
    np.savetxt(path, cloud.points, fmt="%.17g")


def save_result(path, result) -> None:
    """Write an AlignResult as a JSON document."""
    doc = {
        "transforms": [
            {"rotation_axis_angle": _full_axis_angle(T),
             "translation": T.translation.tolist()}
            for T in result.transforms
        ],
        "gpe_trace": list(result.gpe_trace),
        "iterations": result.outer_iterations,
        "converged": bool(result.converged),
        "wall_time": result.wall_time,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _full_axis_angle(T) -> list:
    # 2D angles are reported as a rotation about the z axis
    if T.dim == 2:
        return [0.0, 0.0, float(T.rotation[0])]
    return T.rotation.tolist()
