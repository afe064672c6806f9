"""File formats for cubes, libraries, abundances and segmentations.

Cubes are a JSON header plus a raw little-endian band-sequential payload.
Abundance and segmentation payloads are raw little-endian matrices with a
JSON sidecar at ``<path>.json``. Libraries are CSV with a header row of
signature names and one row per band.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np
from matplotlib import image as mpimage

from .core import (
    AbundanceMap,
    DimensionMismatch,
    HmuaError,
    HyperCube,
    SegmentationMap,
    SpectralLibrary,
)

DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}
LAYOUT = "bsq"


class ParseError(HmuaError, ValueError):
    pass


class SizeMismatch(HmuaError, ValueError):
    pass


class RaggedRows(HmuaError, ValueError):
    pass


class IoError(HmuaError, OSError):
    pass


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _dump_json(obj, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _write_bytes(arr: np.ndarray, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def _read_payload(path, dtype: np.dtype, count: int) -> np.ndarray:
    try:
        size = os.path.getsize(path)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
    expected = count * dtype.itemsize
    if size != expected:
        raise SizeMismatch(f"{path}: {size} bytes, expected {expected}")
    return np.fromfile(path, dtype=dtype, count=count)


def parse_cube_header(header: dict) -> tuple[int, int, int, np.dtype]:
    if not isinstance(header, dict):
        raise ParseError("cube header must be a JSON object")
    try:
        rows, cols, bands = (header[k] for k in ("rows", "cols", "bands"))
        dtype = header.get("dtype", "float64")
    except KeyError as exc:
        raise ParseError(f"cube header missing field {exc}") from exc
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in (rows, cols, bands)):
        raise ParseError(f"cube dims must be integers >= 1, got {rows}, {cols}, {bands}")
    if dtype not in DTYPES:
        raise ParseError(f"unsupported dtype {dtype!r}")
    if header.get("layout", LAYOUT) != LAYOUT:
        raise ParseError(f"unsupported layout {header.get('layout')!r}")
    return rows, cols, bands, DTYPES[dtype]


def read_cube(header_path, data_path) -> HyperCube:
    rows, cols, bands, dtype = parse_cube_header(_load_json(header_path))
    raw = _read_payload(data_path, dtype, rows * cols * bands)
    return HyperCube(rows, cols, raw.astype(np.float64).reshape(bands, rows * cols))


def write_cube(cube: HyperCube, header_path, data_path, dtype: str = "float64") -> None:
    if dtype not in DTYPES:
        raise ParseError(f"unsupported dtype {dtype!r}")
    header = {"rows": cube.rows, "cols": cube.cols, "bands": cube.bands, "dtype": dtype, "layout": LAYOUT}
    _dump_json(header, header_path)
    _write_bytes(cube.data.astype(DTYPES[dtype]), data_path)


def read_library(csv_path) -> SpectralLibrary:
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"{csv_path}: {exc}") from exc
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise ParseError(f"{csv_path}: need a header row and at least one band row")
    names = [n.strip() for n in rows[0]]
    values = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(names) or any(f.strip() == "" for f in r):
            raise RaggedRows(f"{csv_path}:{i}: expected {len(names)} fields, got {len(r)}")
        try:
            values.append([float(f) for f in r])
        except ValueError as exc:
            raise ParseError(f"{csv_path}:{i}: {exc}") from exc
    return SpectralLibrary(np.array(values), tuple(names))


def write_library(lib: SpectralLibrary, csv_path) -> None:
    try:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(lib.names)
            for row in lib.data:
                w.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"{csv_path}: {exc}") from exc


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_abundance(amap: AbundanceMap, path) -> None:
    _write_bytes(amap.data.astype("<f8"), path)
    _dump_json({"endmembers": amap.endmembers, "pixels": amap.pixels, "dtype": "float64"}, _sidecar(path))


def read_abundance(path) -> AbundanceMap:
    meta = _load_json(_sidecar(path))
    try:
        p, n = int(meta["endmembers"]), int(meta["pixels"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{_sidecar(path)}: bad sidecar ({exc})") from exc
    if meta.get("dtype", "float64") != "float64":
        raise ParseError(f"{_sidecar(path)}: only float64 abundances are supported")
    return AbundanceMap(_read_payload(path, DTYPES["float64"], p * n).reshape(p, n))


def write_segmentation(seg: SegmentationMap, path) -> None:
    _write_bytes(seg.labels.astype("<i4"), path)
    meta = {
        "rows": seg.rows,
        "cols": seg.cols,
        "superpixels": seg.count,
        "scale": seg.scale,
        "dtype": "int32",
        "homogeneous": None if seg.homogeneous is None else [bool(f) for f in seg.homogeneous],
    }
    _dump_json(meta, _sidecar(path))


def read_segmentation(path) -> SegmentationMap:
    meta = _load_json(_sidecar(path))
    try:
        rows, cols = int(meta["rows"]), int(meta["cols"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{_sidecar(path)}: bad sidecar ({exc})") from exc
    labels = _read_payload(path, np.dtype("<i4"), rows * cols).reshape(rows, cols)
    flags = meta.get("homogeneous")
    return SegmentationMap(labels.astype(np.int64), int(meta.get("scale", 0)),
                           None if flags is None else np.array(flags, dtype=bool))


def false_color(cube: HyperCube) -> np.ndarray:
    """RGB composite from bands at 10%, 50% and 90% of the band range, each min-max stretched."""
    last = cube.bands - 1
    chans = []
    for frac in (0.1, 0.5, 0.9):
        b = cube.band_image(int(round(frac * last)))
        lo, hi = b.min(), b.max()
        chans.append((b - lo) / (hi - lo) if hi > lo else np.zeros_like(b))
    return np.stack(chans, axis=-1)


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels whose right or lower neighbour belongs to another superpixel."""
    labels = np.asarray(labels)
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    edge[:-1, :] |= labels[:-1, :] != labels[1:, :]
    return edge


BOUNDARY_RGB = (1.0, 0.0, 0.0)


def segmentation_overlay(seg: SegmentationMap, cube: HyperCube) -> np.ndarray:
    if (seg.rows, seg.cols) != (cube.rows, cube.cols):
        raise DimensionMismatch(f"segmentation is {seg.rows}x{seg.cols}, cube is {cube.rows}x{cube.cols}")
    rgb = false_color(cube)
    if seg.homogeneous is not None:
        lab = seg.labels
        shade = np.zeros(lab.shape, dtype=bool)
        valid = lab >= 0
        shade[valid] = ~seg.homogeneous[lab[valid]]
        rgb[shade] = 0.5 * rgb[shade] + 0.25
    rgb[boundary_mask(seg.labels)] = BOUNDARY_RGB
    return rgb


def render_segmentation(seg: SegmentationMap, cube: HyperCube, path) -> None:
    """PNG of the false-colour composite with boundaries in red and non-homogeneous regions greyed."""
    rgb = segmentation_overlay(seg, cube)
    try:
        mpimage.imsave(path, np.clip(rgb, 0.0, 1.0), format="png")
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc
