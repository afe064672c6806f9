"""Coarsening (superpixel averaging) and uncoarsening (replication)."""

from __future__ import annotations

import warnings

import numpy as np

from .core import DimensionMismatch, InvalidSegmentation, ScaleOperator, SegmentationMap


def build_operator(seg: SegmentationMap) -> ScaleOperator:
    if not seg.covers_all:
        raise InvalidSegmentation("scale operator needs a segmentation covering every pixel")
    flat = seg.flat
    k = seg.count
    sizes = np.bincount(flat, minlength=k)
    order = np.argsort(flat, kind="stable")
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    if k >= flat.size and flat.size > 1:
        warnings.warn(f"{k} superpixels for {flat.size} pixels: no spatial reduction", stacklevel=2)
    for a in (sizes, order, starts):
        a.setflags(write=False)
    return ScaleOperator(seg, sizes, order, starts)


def coarsen(m: np.ndarray, op: ScaleOperator) -> np.ndarray:
    """Average the columns of ``m`` within each superpixel (``M W``)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != op.pixels:
        raise DimensionMismatch(f"expected {op.pixels} columns, got shape {m.shape}")
    sums = np.add.reduceat(m[:, op.order], op.starts, axis=1)
    return sums / op.sizes


def uncoarsen(mc: np.ndarray, op: ScaleOperator) -> np.ndarray:
    """Copy each superpixel column back onto its member pixels (``Mc W*``)."""
    mc = np.asarray(mc, dtype=np.float64)
    if mc.ndim != 2 or mc.shape[1] != op.superpixels:
        raise DimensionMismatch(f"expected {op.superpixels} columns, got shape {mc.shape}")
    return mc[:, op.segmentation.flat]
