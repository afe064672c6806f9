"""Two-scale unmixing (MUA) and its homogeneity-driven variant (HMUA)."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, NamedTuple, Optional, Sequence

from .core import (
    AbundanceMap,
    HomogeneityParams,
    HyperCube,
    InvalidParameter,
    SegmentationMap,
    SolverParams,
    SpectralLibrary,
    validate,
)
from .homogeneity import NonDecreasingSigmas, refine
from .scalespace import build_operator, coarsen, uncoarsen
from .slic import SlicParams, slic_segment
from .solver import SolveResult, solve_coarse, solve_regularized
from .synth import sre

log = logging.getLogger(__name__)

MODES = ("mua", "hmua")

# flat JSON key -> (section, attribute)
_CONFIG_KEYS = {
    "sigma0": ("slic", "sigma"),
    "gamma": ("slic", "gamma"),
    "slic_iters": ("slic", "iters"),
    "min_size_fraction": ("slic", "min_size_fraction"),
    "tau_outliers": ("hp", "tau_outliers"),
    "tau_homog": ("hp", "tau_homog"),
    "lambda_c": ("solver", "lam_c"),
    "lambda": ("solver", "lam"),
    "beta": ("solver", "beta"),
    "mu": ("solver", "mu"),
    "max_iters": ("solver", "max_iters"),
    "tol": ("solver", "tol"),
}


@dataclass(frozen=True)
class PipelineConfig:
    slic: SlicParams = SlicParams(sigma=8.0)
    refine_sigmas: tuple = ()
    hp: HomogeneityParams = HomogeneityParams()
    solver: SolverParams = SolverParams()
    mode: str = "hmua"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES}, got {self.mode!r}")
        sig = tuple(float(s) for s in self.refine_sigmas)
        object.__setattr__(self, "refine_sigmas", sig)
        if self.mode == "hmua":
            full = (self.slic.sigma,) + sig
            if any(b >= a for a, b in zip(full, full[1:])):
                raise NonDecreasingSigmas(f"sigma0 and refinement sizes must strictly decrease, got {full}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise InvalidParameter("config must be a JSON object")
        unknown = set(d) - set(_CONFIG_KEYS) - {"refine_sigmas", "mode"}
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        sections: dict[str, dict] = {"slic": {}, "hp": {}, "solver": {}}
        for key, (sec, attr) in _CONFIG_KEYS.items():
            if key in d:
                sections[sec][attr] = d[key]
        sections["slic"].setdefault("sigma", 8.0)
        try:
            return cls(
                slic=SlicParams(**sections["slic"]),
                refine_sigmas=tuple(d.get("refine_sigmas", ())),
                hp=HomogeneityParams(**sections["hp"]),
                solver=SolverParams(**sections["solver"]),
                mode=d.get("mode", "hmua"),
            )
        except TypeError as exc:
            raise InvalidParameter(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "refine_sigmas": list(self.refine_sigmas)}
        for key, (sec, attr) in _CONFIG_KEYS.items():
            out[key] = getattr(getattr(self, sec), attr)
        return out

    def updated(self, **flat) -> "PipelineConfig":
        d = self.to_dict()
        d.update(flat)
        return PipelineConfig.from_dict(d)


class MuaOutput(NamedTuple):
    abundances: AbundanceMap
    coarse: SolveResult
    fine: SolveResult


class HmuaOutput(NamedTuple):
    abundances: AbundanceMap
    segmentation: SegmentationMap
    eta_trace: list
    diagnostics: dict


def mua_unmix(cube: HyperCube, lib: SpectralLibrary, seg: SegmentationMap, cfg: PipelineConfig) -> MuaOutput:
    """Coarse solve on superpixel means, replicate, then regularized pixel-level solve."""
    validate(cube, lib)
    op = build_operator(seg)
    yc = coarsen(cube.data, op)
    coarse = solve_coarse(yc, lib, cfg.solver.lam_c, cfg.solver)
    xd = uncoarsen(coarse.X.data, op)
    fine = solve_regularized(cube.data, lib, xd, cfg.solver.lam, cfg.solver.beta, cfg.solver)
    return MuaOutput(fine.X, coarse, fine)


def segment(cube: HyperCube, cfg: PipelineConfig):
    """Initial oversegmentation, plus refinement in hmua mode.

    Returns the final map and the refinement record (``None`` in mua mode).
    """
    sigma0 = min(cfg.slic.sigma, max(cube.rows, cube.cols))
    seg0 = slic_segment(cube, replace(cfg.slic, sigma=sigma0))
    if cfg.mode == "mua":
        return seg0, None
    ref = refine(cube, seg0, cfg.refine_sigmas, cfg.slic.gamma, cfg.hp,
                 iters=cfg.slic.iters, min_size_fraction=cfg.slic.min_size_fraction)
    return ref.segmentation, ref


def unmix(cube: HyperCube, lib: SpectralLibrary, cfg: PipelineConfig) -> HmuaOutput:
    """Run the configured pipeline end to end and collect diagnostics."""
    validate(cube, lib)
    t0 = time.perf_counter()
    seg, ref = segment(cube, cfg)
    t1 = time.perf_counter()
    out = mua_unmix(cube, lib, seg, cfg)
    t2 = time.perf_counter()

    diag: dict[str, Any] = {
        "mode": cfg.mode,
        "K_initial": ref.count_trace[0] if ref else seg.count,
        "K_final": seg.count,
        "iters_coarse": out.coarse.iterations,
        "iters_fine": out.fine.iterations,
        "converged_coarse": out.coarse.converged,
        "converged_fine": out.fine.converged,
        "residuals_coarse": [out.coarse.primal_residual, out.coarse.dual_residual],
        "residuals_fine": [out.fine.primal_residual, out.fine.dual_residual],
        "mu_coarse": out.coarse.mu,
        "mu_fine": out.fine.mu,
        "segmentation_s": t1 - t0,
        "unmixing_s": t2 - t1,
        "runtime_s": t2 - t0,
    }
    eta = []
    if ref is not None:
        eta = list(ref.eta_trace)
        diag["eta_trace"] = eta
        diag["K_trace"] = list(ref.count_trace)
        diag["rounds"] = len(ref.eta_trace) - 1
    return HmuaOutput(out.abundances, seg, eta, diag)


def hmua_unmix(cube: HyperCube, lib: SpectralLibrary, cfg: PipelineConfig) -> HmuaOutput:
    if cfg.mode != "hmua":
        raise InvalidParameter("hmua_unmix needs a config with mode='hmua'")
    return unmix(cube, lib, cfg)


# ---------------------------------------------------------------------------
# batch evaluation (grid search and sweeps)

_shared: dict = {}


def _init_worker(cube, lib, truth, blas_threads):
    _shared.update(cube=cube, lib=lib, truth=truth)
    if blas_threads:
        from threadpoolctl import threadpool_limits

        threadpool_limits(blas_threads)


def _run_point(flat: dict) -> dict:
    t0 = time.perf_counter()
    try:
        cfg = PipelineConfig.from_dict(flat)
        res = unmix(_shared["cube"], _shared["lib"], cfg)
        value = sre(_shared["truth"], res.abundances)
        err = None
        k_final = res.diagnostics["K_final"]
    except Exception as exc:  # a failed grid point is recorded, not fatal
        log.warning("grid point %s failed: %s", flat, exc)
        value, err, k_final = math.nan, f"{type(exc).__name__}: {exc}", None
    return {"sre": value, "runtime_s": time.perf_counter() - t0, "K_final": k_final, "error": err}


def evaluate_configs(
    cube: HyperCube, lib: SpectralLibrary, truth: AbundanceMap, configs: Sequence[dict], workers: int = 1
) -> list:
    """SRE and runtime for each flat config dict, in input order."""
    configs = [dict(c) for c in configs]
    if workers <= 1:
        _init_worker(cube, lib, truth, 0)
        try:
            results = [_run_point(c) for c in configs]
        finally:
            _shared.clear()
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cube, lib, truth, 1)) as pool:
            results = list(pool.map(_run_point, configs))
    return [{"params": c, **r} for c, r in zip(configs, results)]


def expand_grid(param_grid: dict) -> list:
    if not param_grid:
        raise InvalidParameter("parameter grid is empty")
    keys = sorted(param_grid)
    values = [list(param_grid[k]) for k in keys]
    if any(len(v) == 0 for v in values):
        raise InvalidParameter("every grid axis needs at least one value")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _params_key(p: dict) -> tuple:
    return tuple((k, tuple(v) if isinstance(v, list) else v) for k, v in sorted(p.items()))


def rank_rows(rows: list) -> list:
    """Sort by SRE descending; failures last; ties by parameter values."""
    def key(row):
        s = row["sre"]
        failed = s is None or (isinstance(s, float) and math.isnan(s))
        return (failed, -s if not failed else 0.0, _params_key(row["grid_point"] if "grid_point" in row else row["params"]))
    return sorted(rows, key=key)


def grid_search(
    cube: HyperCube,
    lib: SpectralLibrary,
    X_true: AbundanceMap,
    param_grid: dict,
    base: Optional[PipelineConfig] = None,
    workers: int = 1,
) -> list:
    """Evaluate every combination in ``param_grid`` (flat config keys) and rank by SRE."""
    base = base or PipelineConfig()
    points = expand_grid(param_grid)
    flats = []
    for p in points:
        d = base.to_dict()
        d.update(p)
        flats.append(d)
    rows = evaluate_configs(cube, lib, X_true, flats, workers)
    for row, p in zip(rows, points):
        row["grid_point"] = p
    return rank_rows(rows)
