"""Synthetic scenes: abundance fields, linear mixing with calibrated noise, SRE.

Abundance fields are built from white noise smoothed by repeated box
filters and projected pixel-wise onto the probability simplex. Three
layouts are available:

* ``uniform-blocks``   Voronoi cells, each dominated by one endmember,
                       with borders blurred over ``smoothness`` pixels.
* ``irregular-blobs``  smoothed Gaussian fields; the simplex projection acts
                       as a per-pixel threshold and leaves a few active
                       endmembers with irregular contours.
* ``quadrant-composite`` four quadrants, each filled with a different
                       variant of the two layouts above.

All randomness flows from a Philox counter-based generator keyed by the
scene seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .core import (
    AbundanceMap,
    DimensionMismatch,
    HmuaError,
    HyperCube,
    InvalidParameter,
    SpectralLibrary,
)

PATTERNS = ("uniform-blocks", "irregular-blobs", "quadrant-composite")
BOX_PASSES = 3


class IndexOutOfRange(HmuaError, IndexError):
    pass


class ZeroSignal(HmuaError, ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    rows: int = 100
    cols: int = 100
    endmember_count: int = 9
    pattern: str = "uniform-blocks"
    smoothness: int = 5
    seed: int = 0
    region_size: int = 25

    def __post_init__(self):
        if self.endmember_count < 2:
            raise InvalidParameter("a scene needs at least two endmembers")
        if self.pattern not in PATTERNS:
            raise InvalidParameter(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.rows < 1 or self.cols < 1:
            raise InvalidParameter("scene dims must be >= 1")
        if self.smoothness < 0 or self.region_size < 1:
            raise InvalidParameter("smoothness must be >= 0 and region_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidParameter(f"unknown scene fields: {sorted(unknown)}")
        return cls(**known)


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each column of ``v`` onto the unit simplex."""
    v = np.asarray(v, dtype=np.float64)
    p = v.shape[0]
    u = -np.sort(-v, axis=0)
    css = np.cumsum(u, axis=0) - 1.0
    ind = np.arange(1, p + 1)[:, None]
    cond = u - css / ind > 0
    rho = p - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[rho, np.arange(v.shape[1])] / (rho + 1)
    x = np.maximum(v - theta, 0.0)
    # exact renormalization keeps column sums at 1 to round-off
    return x / x.sum(axis=0, keepdims=True)


def _smooth(field: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return field
    for _ in range(BOX_PASSES):
        field = uniform_filter(field, size=(1, width, width), mode="reflect")
    return field


def _blocks(rng, p, rows, cols, smoothness, region_size) -> np.ndarray:
    n_cells = max(p, int(round(rows * cols / region_size ** 2)))
    cy = rng.uniform(0, rows, n_cells)
    cx = rng.uniform(0, cols, n_cells)
    owner = np.concatenate([rng.permutation(p), rng.integers(0, p, max(0, n_cells - p))])[:n_cells]
    yy, xx = np.mgrid[0:rows, 0:cols]
    d2 = (yy[..., None] - cy) ** 2 + (xx[..., None] - cx) ** 2
    cell = np.argmin(d2, axis=-1)
    planes = np.zeros((p, rows, cols))
    planes[owner[cell], yy, xx] = 1.0
    if smoothness == 0:
        return planes.reshape(p, -1)
    planes = _smooth(planes, smoothness)
    return project_simplex(planes.reshape(p, -1))


def _blobs(rng, p, rows, cols, smoothness) -> np.ndarray:
    noise = rng.standard_normal((p, rows, cols))
    field = _smooth(noise, max(smoothness, 1))
    std = field.reshape(p, -1).std(axis=1)
    field = field / np.where(std > 0, std, 1.0)[:, None, None]
    return project_simplex(field.reshape(p, -1))


def generate_abundances(spec: SceneSpec) -> AbundanceMap:
    rng = rng_for(spec.seed, 1)
    p, rows, cols = spec.endmember_count, spec.rows, spec.cols
    if spec.pattern == "uniform-blocks":
        x = _blocks(rng, p, rows, cols, spec.smoothness, spec.region_size)
    elif spec.pattern == "irregular-blobs":
        x = _blobs(rng, p, rows, cols, spec.smoothness)
    else:
        planes = np.zeros((p, rows, cols))
        h, w = rows // 2, cols // 2
        quads = [(0, h, 0, w), (0, h, w, cols), (h, rows, 0, w), (h, rows, w, cols)]
        s = max(spec.smoothness, 2)
        makers = [
            lambda r, c: _blocks(rng, p, r, c, s, spec.region_size),
            lambda r, c: _blobs(rng, p, r, c, s),
            lambda r, c: _blocks(rng, p, r, c, max(s // 2, 1), max(spec.region_size // 2, 2)),
            lambda r, c: _blobs(rng, p, r, c, max(s // 2, 1)),
        ]
        for (r0, r1, c0, c1), make in zip(quads, makers):
            if r1 > r0 and c1 > c0:
                planes[:, r0:r1, c0:c1] = make(r1 - r0, c1 - c0).reshape(p, r1 - r0, c1 - c0)
        x = planes.reshape(p, -1)
    return AbundanceMap.clamped(x)


def choose_endmembers(lib: SpectralLibrary, count: int, seed: int) -> list:
    if not 1 <= count <= lib.count:
        raise IndexOutOfRange(f"cannot pick {count} of {lib.count} signatures")
    return sorted(rng_for(seed, 2).choice(lib.count, size=count, replace=False).tolist())


def _spectrum(rng, wl, base=None):
    if base is None:
        base = rng.uniform(0.2, 0.6) + rng.uniform(-0.3, 0.3) * wl
        for _ in range(rng.integers(2, 5)):
            c, w, a = rng.uniform(0, 1), rng.uniform(0.1, 0.4), rng.uniform(-0.15, 0.15)
            base = base + a * np.exp(-0.5 * ((wl - c) / w) ** 2)
    s = base * rng.uniform(0.85, 1.15) + rng.uniform(-0.1, 0.1) * (wl - 0.5)
    for _ in range(rng.integers(3, 9)):
        c, w, depth = rng.uniform(0, 1), rng.uniform(0.003, 0.03), rng.uniform(0.02, 0.2)
        s = s - depth * np.exp(-0.5 * ((wl - c) / w) ** 2)
    return base, np.clip(s, 0.01, 0.99)


def synthetic_library(
    bands: int = 224, count: int = 240, seed: int = 0, family_size: int = 4, min_angle_deg: float = 4.44
) -> SpectralLibrary:
    """Smooth reflectance-like signatures grouped in families sharing a continuum.

    Family members differ by absorption features and tilt. Any candidate
    within ``min_angle_deg`` of an accepted signature is redrawn, which caps
    the mutual coherence near the level of pruned mineral libraries.
    """
    rng = rng_for(seed, 3)
    wl = np.linspace(0.0, 1.0, bands)
    cos_max = math.cos(math.radians(min_angle_deg))
    accepted: list = []
    unit: list = []
    base, left, attempts = None, 0, 0
    while len(accepted) < count:
        if left == 0 or attempts > 50:
            base, left, attempts = None, family_size, 0
        base, s = _spectrum(rng, wl, base)
        u = s / np.linalg.norm(s)
        attempts += 1
        if unit and np.max(np.asarray(unit) @ u) > cos_max:
            continue
        accepted.append(s)
        unit.append(u)
        left -= 1
        attempts = 0
    data = np.array(accepted).T
    return SpectralLibrary(data, tuple(f"sig{i:03d}" for i in range(count)))


def mix_and_corrupt(
    X: AbundanceMap,
    A: SpectralLibrary,
    endmember_ids: Sequence[int],
    snr_db: float,
    seed: int,
    shape: Optional[tuple] = None,
) -> HyperCube:
    """Linear mixture ``A[:, ids] X`` plus white Gaussian noise at exactly ``snr_db``.

    ``snr_db = inf`` returns the clean mixture. ``shape`` gives the image
    ``(rows, cols)``; a single row is assumed when omitted.
    """
    ids = list(endmember_ids)
    if any(i < 0 or i >= A.count for i in ids):
        raise IndexOutOfRange(f"endmember ids {ids} out of range for {A.count} signatures")
    if len(ids) != X.endmembers:
        raise DimensionMismatch(f"{len(ids)} ids for {X.endmembers} abundance rows")
    rows, cols = shape if shape is not None else (1, X.pixels)
    if rows * cols != X.pixels:
        raise DimensionMismatch(f"shape {rows}x{cols} does not match {X.pixels} pixels")
    clean = A.data[:, ids] @ X.data
    if math.isinf(snr_db) and snr_db > 0:
        noise = np.zeros_like(clean)
    else:
        noise = rng_for(seed, 4).standard_normal(clean.shape)
        energy = float(np.vdot(clean, clean))
        target = energy / 10.0 ** (snr_db / 10.0)
        noise *= math.sqrt(target / float(np.vdot(noise, noise)))
    return HyperCube(rows, cols, clean + noise, noise)


def measured_snr(cube: HyperCube) -> float:
    if cube.noise is None:
        raise InvalidParameter("cube carries no noise realization")
    clean = cube.data - cube.noise
    ne = float(np.vdot(cube.noise, cube.noise))
    return math.inf if ne == 0 else 10.0 * math.log10(float(np.vdot(clean, clean)) / ne)


def sre(X_true, X_est) -> float:
    """Signal-to-reconstruction error in dB (``inf`` for a perfect estimate)."""
    xt = X_true.data if isinstance(X_true, AbundanceMap) else np.asarray(X_true, dtype=np.float64)
    xe = X_est.data if isinstance(X_est, AbundanceMap) else np.asarray(X_est, dtype=np.float64)
    if xt.shape != xe.shape:
        raise DimensionMismatch(f"shapes differ: {xt.shape} vs {xe.shape}")
    num = float(np.vdot(xt, xt))
    if num == 0:
        raise ZeroSignal("reference abundances are all zero")
    e = xt - xe
    den = float(np.vdot(e, e))
    return math.inf if den == 0 else 10.0 * math.log10(num / den)
