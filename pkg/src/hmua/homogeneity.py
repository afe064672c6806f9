"""Robust superpixel homogeneity test and hierarchical refinement.

A superpixel is scored by the distances of its pixels to its per-band
median. The largest ``tau_outliers`` fraction of distances is discarded and
the relative gap between the largest remaining distance and their mean is
compared with ``tau_homog``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    DimensionMismatch,
    HmuaError,
    HomogeneityParams,
    HyperCube,
    InvalidParameter,
    SegmentationMap,
    canonical_labels,
)
from .slic import SlicParams, slic_segment

MIN_SPLIT_SIZE = 4


class EmptyVector(HmuaError, ValueError):
    pass


class NonDecreasingSigmas(HmuaError, ValueError):
    pass


@dataclass(frozen=True)
class HomogeneityReport:
    deltas: np.ndarray
    flags: np.ndarray
    eta: float

    @property
    def homogeneous_count(self) -> int:
        return int(self.flags.sum())


def _check_cover(cube: HyperCube, seg: SegmentationMap) -> None:
    if (seg.rows, seg.cols) != (cube.rows, cube.cols):
        raise DimensionMismatch(f"segmentation is {seg.rows}x{seg.cols}, cube is {cube.rows}x{cube.cols}")


def superpixel_median(cube: HyperCube, seg: SegmentationMap, k: int) -> np.ndarray:
    _check_cover(cube, seg)
    return np.median(cube.data[:, seg.members(k)], axis=1)


def distance_vector(cube: HyperCube, seg: SegmentationMap, k: int) -> np.ndarray:
    """Distances from each member pixel (row-major order) to the superpixel median."""
    _check_cover(cube, seg)
    pix = cube.data[:, seg.members(k)]
    med = np.median(pix, axis=1)
    return np.linalg.norm(pix - med[:, None], axis=0)


def retained_count(n: int, tau_outliers: float) -> int:
    # guard against 0.7*10 == 6.999... style round-off before flooring
    return max(1, math.floor((1.0 - tau_outliers) * n + 1e-9))


def homogeneity_deviation(d, params: HomogeneityParams) -> tuple[float, bool]:
    d = np.asarray(d, dtype=np.float64).ravel()
    if d.size == 0:
        raise EmptyVector("distance vector is empty")
    keep = retained_count(d.size, params.tau_outliers)
    order = np.argsort(-d, kind="stable")
    trimmed = d[order[d.size - keep:]]
    mean = trimmed.mean()
    if mean == 0:
        return 0.0, True
    delta = float((trimmed.max() - mean) / mean)
    return delta, delta <= params.tau_homog


def assess(cube: HyperCube, seg: SegmentationMap, params: HomogeneityParams) -> HomogeneityReport:
    _check_cover(cube, seg)
    if not seg.covers_all:
        raise DimensionMismatch("segmentation does not cover every pixel")
    flat = seg.flat
    k_total = seg.count
    order = np.argsort(flat, kind="stable")
    bounds = np.concatenate(([0], np.cumsum(np.bincount(flat, minlength=k_total))))
    deltas = np.zeros(k_total)
    flags = np.ones(k_total, dtype=bool)
    data = cube.data
    for k in range(k_total):
        idx = order[bounds[k]:bounds[k + 1]]
        if idx.size == 1:
            continue
        pix = data[:, idx]
        d = np.linalg.norm(pix - np.median(pix, axis=1)[:, None], axis=0)
        deltas[k], flags[k] = homogeneity_deviation(d, params)
    eta = 100.0 * flags.sum() / k_total
    return HomogeneityReport(deltas, flags, float(eta))


class Refinement(NamedTuple):
    segmentation: SegmentationMap
    eta_trace: list
    count_trace: list
    reports: list


def refine(
    cube: HyperCube,
    seg0: SegmentationMap,
    sigmas: Sequence[float],
    gamma: float,
    hp: HomogeneityParams,
    iters: int = 10,
    min_size_fraction: float = 0.25,
) -> Refinement:
    """Re-segment non-homogeneous superpixels with progressively smaller sizes.

    Homogeneous superpixels are frozen: they keep their pixels and take the
    first labels (in scan order); regions produced by each round are appended
    after them.
    """
    sigmas = list(sigmas)
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise NonDecreasingSigmas(f"refinement sizes must strictly decrease, got {sigmas}")
    _check_cover(cube, seg0)

    seg = seg0.canonical()
    report = assess(cube, seg, hp)
    seg = SegmentationMap(seg.labels, 0, report.flags, check_connectivity=False)
    etas, counts, reports = [report.eta], [seg.count], [report]

    for r, sigma in enumerate(sigmas, start=1):
        if report.eta >= 100.0:
            break
        if sigma < 1:
            raise InvalidParameter(f"sigma must be >= 1, got {sigma}")
        sizes = np.bincount(seg.flat, minlength=seg.count)
        split = np.flatnonzero(~report.flags & (sizes >= MIN_SPLIT_SIZE))
        if split.size == 0:
            break
        mask = np.isin(seg.labels, split)
        sigma_eff = min(sigma, max(cube.rows, cube.cols))
        sub = slic_segment(cube, SlicParams(sigma_eff, gamma, iters, min_size_fraction), mask)

        frozen = canonical_labels(np.where(mask, -1, seg.labels))
        n_frozen = int(frozen.max()) + 1 if (frozen >= 0).any() else 0
        labels = np.where(mask, sub.labels + n_frozen, frozen)
        if np.array_equal(canonical_labels(labels), canonical_labels(seg.labels)):
            break
        candidate = SegmentationMap(labels, r, check_connectivity=False)
        report = assess(cube, candidate, hp)
        seg = candidate.with_flags(report.flags)
        etas.append(report.eta)
        counts.append(seg.count)
        reports.append(report)

    return Refinement(seg, etas, counts, reports)
