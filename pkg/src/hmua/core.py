"""Domain types shared across the package.

All containers are frozen dataclasses whose arrays are flagged read-only at
construction, so values can be passed between threads and processes without
defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class HmuaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(HmuaError, ValueError):
    pass


class NonFinite(HmuaError, ValueError):
    pass


class NegativeAbundance(HmuaError, ValueError):
    pass


class InvalidSegmentation(HmuaError, ValueError):
    pass


class InvalidLabel(HmuaError, KeyError):
    pass


class InvalidParameter(HmuaError, ValueError):
    pass


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HyperCube:
    """An L-band image with ``rows * cols`` pixels stored band-major.

    ``data`` has shape ``(bands, rows * cols)``; pixel ``n`` sits at row
    ``n // cols`` and column ``n % cols``. ``noise`` optionally holds the
    additive noise realization used to synthesize the cube.
    """

    rows: int
    cols: int
    data: np.ndarray
    noise: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionMismatch(f"image dims must be >= 1, got {self.rows}x{self.cols}")
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1:
            raise DimensionMismatch(f"cube data must be (bands, pixels), got shape {data.shape}")
        if data.shape[1] != self.rows * self.cols:
            raise DimensionMismatch(
                f"cube has {data.shape[1]} pixel columns, expected {self.rows}*{self.cols}"
            )
        if not np.all(np.isfinite(data)):
            raise NonFinite("cube contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data))
        if self.noise is not None:
            noise = np.asarray(self.noise)
            if noise.shape != data.shape:
                raise DimensionMismatch("noise realization must match cube shape")
            object.__setattr__(self, "noise", _frozen(noise))

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def band_image(self, band: int) -> np.ndarray:
        return self.data[band].reshape(self.rows, self.cols)


@dataclass(frozen=True)
class SpectralLibrary:
    """L x P matrix of endmember signatures with one name per column."""

    data: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or min(data.shape) < 1:
            raise DimensionMismatch(f"library must be a nonempty (bands, count) matrix, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite("library contains NaN or Inf")
        zero_cols = np.flatnonzero(~np.any(data != 0, axis=0))
        if zero_cols.size:
            raise InvalidParameter(f"library has all-zero columns: {zero_cols.tolist()}")
        names = tuple(self.names) if len(self.names) else tuple(f"em{i}" for i in range(data.shape[1]))
        if len(names) != data.shape[1]:
            raise DimensionMismatch(f"{len(names)} names for {data.shape[1]} signatures")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "names", names)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def subset(self, ids: Sequence[int]) -> "SpectralLibrary":
        ids = list(ids)
        return SpectralLibrary(self.data[:, ids], tuple(self.names[i] for i in ids))


@dataclass(frozen=True)
class AbundanceMap:
    """Nonnegative P x N abundance matrix (N may be a superpixel count)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DimensionMismatch(f"abundances must be (endmembers, pixels), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite("abundances contain NaN or Inf")
        if np.any(data < 0):
            raise NegativeAbundance(f"negative abundance {data.min():.3g}")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def clamped(cls, data, atol: float = 1e-12) -> "AbundanceMap":
        """Build a map after zeroing round-off negatives no smaller than ``-atol``."""
        data = np.array(data, dtype=np.float64, copy=True)
        if data.size and data.min() < -atol:
            raise NegativeAbundance(f"negative abundance {data.min():.3g} below -{atol}")
        data[data < 0] = 0.0
        return cls(data)

    @property
    def endmembers(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels by first occurrence in a row-major scan.

    Negative entries mark unlabeled pixels and are left untouched.
    """
    labels = np.asarray(labels)
    flat = labels.ravel()
    out = np.full(flat.shape, -1, dtype=np.int64)
    valid = flat >= 0
    if not valid.any():
        return out.reshape(labels.shape)
    uniq, first, inv = np.unique(flat[valid], return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    out[valid] = rank[inv]
    return out.reshape(labels.shape)


def count_components(labels: np.ndarray) -> int:
    """Number of 4-connected same-label components among labeled pixels."""
    labels = np.asarray(labels)
    rows, cols = labels.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst = [], []
    for a, b, la, lb in (
        (idx[:, :-1], idx[:, 1:], labels[:, :-1], labels[:, 1:]),
        (idx[:-1, :], idx[1:, :], labels[:-1, :], labels[1:, :]),
    ):
        same = (la == lb) & (la >= 0)
        src.append(a[same])
        dst.append(b[same])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    n = rows * cols
    graph = coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    return np.unique(comp[labels.ravel() >= 0]).size


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel superpixel labels on a ``rows x cols`` grid.

    Labels run over ``0..K-1``. A value of ``-1`` marks a pixel outside the
    region a masked segmentation was asked to cover; such maps are partial
    and are rejected by operations that need full coverage.
    """

    labels: np.ndarray
    scale: int = 0
    homogeneous: Optional[np.ndarray] = None
    check_connectivity: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise InvalidSegmentation(f"labels must be a nonempty 2-D grid, got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise InvalidSegmentation("labels must be integers")
        labels = _frozen(labels, dtype=np.int64)
        if labels.min() < -1:
            raise InvalidSegmentation("labels below -1 are not allowed")
        valid = labels[labels >= 0]
        k = int(valid.max()) + 1 if valid.size else 0
        if k and np.unique(valid).size != k:
            raise InvalidSegmentation("labels must cover 0..K-1 without gaps")
        if self.check_connectivity and k and count_components(labels) != k:
            raise InvalidSegmentation("every superpixel must be 4-connected")
        object.__setattr__(self, "labels", labels)
        if self.homogeneous is not None:
            flags = _frozen(self.homogeneous, dtype=bool)
            if flags.shape != (k,):
                raise InvalidSegmentation(f"{flags.size} homogeneity flags for {k} superpixels")
            object.__setattr__(self, "homogeneous", flags)

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def count(self) -> int:
        valid = self.labels[self.labels >= 0]
        return int(valid.max()) + 1 if valid.size else 0

    @property
    def covers_all(self) -> bool:
        return bool(np.all(self.labels >= 0))

    @property
    def flat(self) -> np.ndarray:
        return self.labels.ravel()

    def members(self, k: int) -> np.ndarray:
        """Row-major pixel indices of superpixel ``k``."""
        if not 0 <= k < self.count:
            raise InvalidLabel(f"superpixel {k} not in 0..{self.count - 1}")
        return np.flatnonzero(self.flat == k)

    def canonical(self) -> "SegmentationMap":
        relabeled = canonical_labels(self.labels)
        flags = None
        if self.homogeneous is not None:
            old = self.flat
            new = relabeled.ravel()
            valid = np.flatnonzero(new >= 0)
            _, first = np.unique(new[valid], return_index=True)
            flags = self.homogeneous[old[valid[first]]]
        return SegmentationMap(relabeled, self.scale, flags, check_connectivity=False)

    def with_flags(self, flags) -> "SegmentationMap":
        return SegmentationMap(self.labels, self.scale, np.asarray(flags, dtype=bool), check_connectivity=False)


@dataclass(frozen=True)
class ScaleOperator:
    """Averaging/replication pair induced by a full-coverage segmentation.

    Pixels are kept grouped by superpixel (``order`` sorted by label, group
    ``k`` starting at ``starts[k]``), so the operator is never materialized
    as a dense N x K matrix.
    """

    segmentation: SegmentationMap
    sizes: np.ndarray
    order: np.ndarray
    starts: np.ndarray

    @property
    def superpixels(self) -> int:
        return self.sizes.size

    @property
    def pixels(self) -> int:
        return self.segmentation.labels.size


@dataclass(frozen=True)
class HomogeneityParams:
    tau_outliers: float = 0.1
    tau_homog: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.tau_outliers < 1.0:
            raise InvalidParameter(f"tau_outliers must lie in [0, 1), got {self.tau_outliers}")
        if not (np.isfinite(self.tau_homog) and self.tau_homog >= 0):
            raise InvalidParameter(f"tau_homog must be >= 0, got {self.tau_homog}")


@dataclass(frozen=True)
class SolverParams:
    """Regularization weights and ADMM controls.

    ``mu=None`` selects ``0.1 * mean(|A^T Y|)`` separately for each solve.
    """

    lam: float = 0.01
    lam_c: float = 0.001
    beta: float = 1.0
    mu: Optional[float] = None
    max_iters: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        for name in ("lam", "lam_c", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidParameter(f"{name} must be finite and >= 0, got {v}")
        if self.mu is not None and not (np.isfinite(self.mu) and self.mu > 0):
            raise InvalidParameter(f"mu must be > 0, got {self.mu}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidParameter(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not (np.isfinite(self.tol) and self.tol > 0):
            raise InvalidParameter(f"tol must be > 0, got {self.tol}")


def validate(cube: HyperCube, lib: SpectralLibrary) -> None:
    """Check that a cube and a library can be unmixed together."""
    for arr, what in ((cube.data, "cube"), (lib.data, "library")):
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"{what} contains NaN or Inf")
    if cube.bands != lib.bands:
        raise DimensionMismatch(f"cube has {cube.bands} bands, library has {lib.bands}")
