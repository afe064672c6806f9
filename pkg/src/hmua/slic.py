"""SLIC oversegmentation of multichannel images.

Localized k-means over the joint distance

    d = sqrt(d_spec^2 + (gamma / sigma)^2 * d_xy^2)

with ``d_spec`` the Euclidean distance over all bands and ``d_xy`` the
spatial distance in pixels. A boolean mask restricts seeding and
assignment to a subset of the image, which is how non-homogeneous regions
are re-segmented without touching the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import HmuaError, HyperCube, InvalidParameter, SegmentationMap, canonical_labels


class EmptyMask(HmuaError, ValueError):
    pass


class DegenerateImage(HmuaError, ValueError):
    pass


@dataclass(frozen=True)
class SlicParams:
    sigma: float
    gamma: float = 0.01
    iters: int = 10
    min_size_fraction: float = 0.25

    def __post_init__(self):
        if not self.sigma >= 1:
            raise InvalidParameter(f"sigma must be >= 1, got {self.sigma}")
        if not self.gamma >= 0:
            raise InvalidParameter(f"gamma must be >= 0, got {self.gamma}")
        if self.iters < 1:
            raise InvalidParameter(f"iters must be >= 1, got {self.iters}")
        if not 0 < self.min_size_fraction <= 1:
            raise InvalidParameter(f"min_size_fraction must lie in (0, 1], got {self.min_size_fraction}")


def _gradient(img: np.ndarray) -> np.ndarray:
    """Squared spectral gradient magnitude with edge replication."""
    p = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    return np.einsum("ijk,ijk->ij", gy, gy) + np.einsum("ijk,ijk->ij", gx, gx)


def _grid_seeds(rows: int, cols: int, sigma: float, mask: np.ndarray, grad: np.ndarray) -> np.ndarray:
    ny = max(1, int(round(rows / sigma)))
    nx = max(1, int(round(cols / sigma)))
    ys = ((np.arange(ny) + 0.5) * rows / ny).astype(int)
    xs = ((np.arange(nx) + 0.5) * cols / nx).astype(int)
    seeds = []
    taken = set()
    for y in ys:
        for x in xs:
            if not mask[y, x]:
                continue
            best, by, bx = grad[y, x], y, x
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < rows and 0 <= xx < cols and mask[yy, xx] and grad[yy, xx] < best:
                        best, by, bx = grad[yy, xx], yy, xx
            if (by, bx) not in taken:
                taken.add((by, bx))
                seeds.append((by, bx))
    return np.array(seeds, dtype=np.int64).reshape(-1, 2)


def _assign(img, sq, yy, xx, mask, spec_c, pos_c, half, w2):
    rows, cols, _ = img.shape
    dist = np.full((rows, cols), np.inf)
    lab = np.full((rows, cols), -1, dtype=np.int64)
    for k in range(spec_c.shape[0]):
        cy, cx = pos_c[k]
        r0 = max(0, int(np.floor(cy)) - half)
        r1 = min(rows, int(np.floor(cy)) + half + 1)
        c0 = max(0, int(np.floor(cx)) - half)
        c1 = min(cols, int(np.floor(cx)) + half + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        c = spec_c[k]
        d = sq[r0:r1, c0:c1] - 2.0 * (img[r0:r1, c0:c1] @ c) + c @ c
        np.maximum(d, 0.0, out=d)
        if w2:
            d += w2 * ((yy[r0:r1, None] - cy) ** 2 + (xx[None, c0:c1] - cx) ** 2)
        better = (d < dist[r0:r1, c0:c1]) & mask[r0:r1, c0:c1]
        dist[r0:r1, c0:c1][better] = d[better]
        lab[r0:r1, c0:c1][better] = k
    return lab


def _update(img, lab, spec_c, pos_c):
    rows, cols, bands = img.shape
    flat = lab.ravel()
    sel = np.flatnonzero(flat >= 0)
    if sel.size == 0:
        return spec_c, pos_c
    order = sel[np.argsort(flat[sel], kind="stable")]
    ks, starts, counts = np.unique(flat[order], return_index=True, return_counts=True)
    pix = img.reshape(-1, bands)[order]
    spec_c = spec_c.copy()
    pos_c = pos_c.copy()
    spec_c[ks] = np.add.reduceat(pix, starts, axis=0) / counts[:, None]
    ys, xs = np.divmod(order, cols)
    pos_c[ks, 0] = np.add.reduceat(ys.astype(float), starts) / counts
    pos_c[ks, 1] = np.add.reduceat(xs.astype(float), starts) / counts
    return spec_c, pos_c


def _components(lab: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Component id per pixel for 4-connected runs of equal label inside the mask.

    Unassigned masked pixels (label -1) form components of their own kind.
    Pixels outside the mask get -1.
    """
    rows, cols = lab.shape
    code = np.where(mask, lab + 1, -1)
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst = [], []
    for a, b, ca, cb in (
        (idx[:, :-1], idx[:, 1:], code[:, :-1], code[:, 1:]),
        (idx[:-1, :], idx[1:, :], code[:-1, :], code[1:, :]),
    ):
        same = (ca == cb) & (ca >= 0)
        src.append(a[same])
        dst.append(b[same])
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    n = rows * cols
    _, comp = connected_components(coo_matrix((np.ones(src.size), (src, dst)), shape=(n, n)), directed=False)
    comp = np.where(mask.ravel(), comp, -1)
    return canonical_labels(comp).reshape(rows, cols)


def _enforce_connectivity(lab: np.ndarray, mask: np.ndarray, min_size: float) -> np.ndarray:
    comp = _components(lab, mask)
    ncomp = int(comp.max()) + 1 if comp.max() >= 0 else 0
    flat = comp.ravel()
    sizes = np.bincount(flat[flat >= 0], minlength=ncomp).astype(np.int64)

    neighbors = [set() for _ in range(ncomp)]
    for a, b in ((comp[:, :-1], comp[:, 1:]), (comp[:-1, :], comp[1:, :])):
        diff = (a != b) & (a >= 0) & (b >= 0)
        for u, v in zip(a[diff].tolist(), b[diff].tolist()):
            neighbors[u].add(v)
            neighbors[v].add(u)

    parent = np.arange(ncomp)

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for c in range(ncomp):
        root = find(c)
        if root != c or sizes[c] >= min_size:
            continue
        adj = {find(v) for v in neighbors[c]} - {c}
        if not adj:
            continue
        target = min(adj, key=lambda t: (-sizes[t], t))
        parent[c] = target
        sizes[target] += sizes[c]
        neighbors[target] |= neighbors[c]
        neighbors[c] = set()

    roots = np.array([find(c) for c in range(ncomp)], dtype=np.int64)
    out = np.where(flat >= 0, roots[np.maximum(flat, 0)], -1).reshape(lab.shape)
    return canonical_labels(out)


def slic_segment(cube: HyperCube, params: SlicParams, mask: Optional[np.ndarray] = None) -> SegmentationMap:
    """Oversegment ``cube`` into compact superpixels of side roughly ``params.sigma``.

    With ``mask`` (boolean, ``rows x cols``) only masked pixels are labeled;
    the rest get ``-1`` in the returned partial map.
    """
    rows, cols = cube.rows, cube.cols
    if mask is None:
        mask = np.ones((rows, cols), dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(rows, cols)
        if not mask.any():
            raise EmptyMask("mask selects no pixels")
    if params.sigma > max(rows, cols):
        raise DegenerateImage(f"sigma {params.sigma} exceeds image extent {rows}x{cols}")

    img = np.ascontiguousarray(cube.data.T.reshape(rows, cols, cube.bands))
    sq = np.einsum("ijk,ijk->ij", img, img)
    seeds = _grid_seeds(rows, cols, params.sigma, mask, _gradient(img))

    if len(seeds):
        spec_c = img[seeds[:, 0], seeds[:, 1]].copy()
        pos_c = seeds.astype(float)
        half = max(1, int(np.ceil(params.sigma)))
        w2 = (params.gamma / params.sigma) ** 2
        yy = np.arange(rows, dtype=float)
        xx = np.arange(cols, dtype=float)
        for _ in range(params.iters):
            lab = _assign(img, sq, yy, xx, mask, spec_c, pos_c, half, w2)
            spec_c, pos_c = _update(img, lab, spec_c, pos_c)
    else:
        lab = np.full((rows, cols), -1, dtype=np.int64)

    labels = _enforce_connectivity(lab, mask, params.min_size_fraction * params.sigma ** 2)
    return SegmentationMap(labels, check_connectivity=False)
