"""CSV, JSON and graymap serialization of fields, masks and run summaries."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .fields import ScalarField, VectorField
from .grid import SIDE_LABELS, DomainGrid, RegionMask

_HEADER = ["nx", "ny", "h", "shape"]


def _fmt(v: float) -> str:
    # repr round-trips binary64 exactly
    return repr(float(v))


def write_field_csv(path, field) -> None:
    """Write a scalar or vector field; only domain nodes are listed."""
    g = field.grid
    if isinstance(field, ScalarField):
        comps, names = [field.values], ["value"]
    elif isinstance(field, VectorField):
        comps, names = [field.x, field.y], ["value_x", "value_y"]
    else:
        raise TypeError("expected a ScalarField or VectorField")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADER)
        w.writerow([g.n_nodes, g.n_nodes, _fmt(g.h), g.shape])
        w.writerow(["i", "j", "x", "y", *names])
        ii, jj = np.nonzero(g.domain)
        for i, j in zip(ii, jj):
            w.writerow([i, j, _fmt(g.x[i, j]), _fmt(g.y[i, j]), *(_fmt(c[i, j]) for c in comps)])


def read_field_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r) != _HEADER:
            raise ValueError(f"{path}: not a field CSV")
        nx, ny, h, shape = next(r)
        nx, ny = int(nx), int(ny)
        if nx != ny:
            raise ValueError("only square node lattices are supported")
        grid = DomainGrid(shape, nx - 1)
        if float(h) != grid.h:
            raise ValueError("grid spacing does not match the header")
        cols = next(r)
        ncomp = len(cols) - 4
        comps = [np.zeros((nx, ny)) for _ in range(ncomp)]
        for row in r:
            i, j = int(row[0]), int(row[1])
            for k in range(ncomp):
                comps[k][i, j] = float(row[4 + k])
    if ncomp == 1:
        return ScalarField(grid, comps[0])
    return VectorField(grid, comps[0], comps[1])


def write_region_csv(path, region: RegionMask) -> None:
    g = region.grid
    side = region.side if region.side is not None else np.zeros(region.mask.shape, dtype=np.int8)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "in_region", "side"])
        ii, jj = np.nonzero(g.interior)
        for i, j in zip(ii, jj):
            w.writerow([i, j, int(region.mask[i, j]), SIDE_LABELS[int(side[i, j])]])


def read_region_csv(path, grid: DomainGrid, kind: str = "custom") -> RegionMask:
    labels = {v: k for k, v in SIDE_LABELS.items()}
    mask = np.zeros((grid.n_nodes, grid.n_nodes), dtype=bool)
    side = np.zeros(mask.shape, dtype=np.int8)
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for row in r:
            i, j = int(row["i"]), int(row["j"])
            mask[i, j] = row["in_region"] == "1"
            side[i, j] = labels[row["side"]]
    return RegionMask(grid, mask, kind, side if side.any() else None)


def write_region_pgm(path, region: RegionMask, others: tuple[RegionMask, ...] = ()) -> None:
    """Binary graymap: 0 outside the domain, 96 domain, lighter grays for regions.

    ``others`` are painted first (e.g. the injectivity region under the
    stability region). Image rows run from top (max y) to bottom.
    """
    g = region.grid
    img = np.zeros(g.domain.shape, dtype=np.uint8)
    img[g.domain] = 96
    levels = np.linspace(170, 255, len(others) + 1).astype(np.uint8)
    for lev, r in zip(levels, (*others, region)):
        img[r.mask] = lev
    raster = img.T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{raster.shape[1]} {raster.shape[0]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj
