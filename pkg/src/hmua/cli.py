"""Command-line front end.

Exit codes: 0 success, 2 usage or malformed config, 3 I/O failure,
4 solver non-convergence under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as hio
from .core import AbundanceMap, HmuaError, InvalidParameter
from .homogeneity import NonDecreasingSigmas
from .pipeline import PipelineConfig, evaluate_configs, grid_search, segment, unmix
from .plotting import (
    plot_abundance_maps,
    plot_delta_histograms,
    plot_deviation_histogram,
    plot_sensitivity,
)
from .synth import (
    SceneSpec,
    choose_endmembers,
    generate_abundances,
    measured_snr,
    mix_and_corrupt,
    rng_for,
    sre,
    synthetic_library,
)

log = logging.getLogger("hmua")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NONCONVERGED = 0, 2, 3, 4
SRE_HEADER = "SRE (dB)"

# supplement-style ranges for random parameter draws
STATISTICAL_RANGES = {
    "gamma": (0.001, 0.02),
    "sigma0": (5, 20),
    "tau_outliers": (0.1, 0.2),
    "tau_homog": (0.1, 0.5),
    "lambda_c": (0.001, 0.009),
    "lambda": (0.01, 0.9),
    "beta": (1.0, 50.0),
}
SIGMA_FLOORS = (1, 3, 2)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def _load_config_json(path, what: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed {what} {path}: {exc}", EXIT_USAGE) from exc


def _pipeline_config(path, mode=None) -> PipelineConfig:
    d = _load_config_json(path, "config")
    if not isinstance(d, dict):
        raise CliError(f"config {path} must be a JSON object", EXIT_USAGE)
    if mode:
        d = {**d, "mode": mode}
    try:
        return PipelineConfig.from_dict(d)
    except (InvalidParameter, NonDecreasingSigmas) as exc:
        raise CliError(f"invalid config {path}: {exc}", EXIT_USAGE) from exc


def _data_path(header: str, data) -> str:
    if data:
        return data
    p = Path(header)
    return str(p.with_suffix(".bsq"))


def _read_cube(args):
    return hio.read_cube(args.cube, _data_path(args.cube, args.data))


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out}: {exc}", EXIT_IO) from exc
    return out


def _write_json(obj, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _seed(args, fallback: int) -> int:
    """``--seed`` wins when given; otherwise the seed recorded in the spec file."""
    return int(args.seed) if args.seed is not None else int(fallback)


def _limit_threads(n):
    if n:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n))


def format_sre(value: float) -> str:
    return "inf" if math.isinf(value) and value > 0 else f"{value:.3f}"


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def _cell(v):
    if isinstance(v, (list, tuple)):
        return ";".join(f"{x:g}" for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# ---------------------------------------------------------------------------
# commands


def cmd_library(args) -> int:
    lib = synthetic_library(args.bands, args.count, _seed(args, 0))
    hio.write_library(lib, args.out)
    print(f"wrote {lib.bands}x{lib.count} library to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    raw = _load_config_json(args.spec, "scene spec")
    if not isinstance(raw, dict):
        raise CliError("scene spec must be a JSON object", EXIT_USAGE)
    seed = _seed(args, raw.get("seed", 0))
    raw = {**raw, "seed": seed}
    try:
        spec = SceneSpec.from_dict(raw)
    except (InvalidParameter, TypeError) as exc:
        raise CliError(f"invalid scene spec: {exc}", EXIT_USAGE) from exc
    lib = hio.read_library(args.lib)
    if args.endmembers:
        ids = [int(s) for s in args.endmembers.split(",")]
    else:
        ids = choose_endmembers(lib, spec.endmember_count, seed)
    if len(ids) != spec.endmember_count:
        raise CliError(f"{len(ids)} endmember ids for {spec.endmember_count} endmembers", EXIT_USAGE)

    X = generate_abundances(spec)
    cube = mix_and_corrupt(X, lib, ids, args.snr, seed, shape=(spec.rows, spec.cols))
    truth = np.zeros((lib.count, X.pixels))
    truth[ids] = X.data

    out = _outdir(args.out)
    hio.write_cube(cube, out / "cube.json", out / "cube.bsq")
    hio.write_abundance(AbundanceMap(truth), out / "truth.abund")
    manifest = {
        "spec": spec.to_dict(),
        "library": os.path.basename(args.lib),
        "library_count": lib.count,
        "endmember_ids": ids,
        "endmember_names": [lib.names[i] for i in ids],
        "snr_db": args.snr,
        "measured_snr_db": None if math.isinf(args.snr) else measured_snr(cube),
        "seed": seed,
        "files": {"header": "cube.json", "data": "cube.bsq", "truth": "truth.abund"},
    }
    _write_json(manifest, out / "manifest.json")
    print(f"wrote scene {spec.rows}x{spec.cols}x{cube.bands} at {args.snr} dB to {out}")
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _pipeline_config(args.config, args.mode)
    cube = _read_cube(args)
    seg, ref = segment(cube, cfg)
    out = _outdir(args.out)
    hio.write_segmentation(seg, out / "segmentation.seg")
    hio.render_segmentation(seg, cube, out / "segmentation.png")
    if ref is not None:
        _write_json({"eta_trace": ref.eta_trace, "K_trace": ref.count_trace}, out / "eta_trace.json")
        plot_delta_histograms(ref.reports[0], ref.reports[-1], cfg.hp.tau_homog, out / "delta_hist.png")
    print(f"{seg.count} superpixels")
    return EXIT_OK


def cmd_unmix(args) -> int:
    cfg = _pipeline_config(args.config, args.mode)
    cube = _read_cube(args)
    lib = hio.read_library(args.lib)
    _limit_threads(args.threads)
    try:
        res = unmix(cube, lib, cfg)
    except HmuaError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    out = _outdir(args.out)
    hio.write_abundance(res.abundances, out / "abundances.abund")
    hio.write_segmentation(res.segmentation, out / "segmentation.seg")
    diag = res.diagnostics
    if cfg.mode == "hmua":
        _write_json({"eta_trace": res.eta_trace, "K_trace": diag["K_trace"]}, out / "eta_trace.json")
    _write_json(diag, out / "diagnostics.json")
    hio.render_segmentation(res.segmentation, cube, out / "segmentation.png")
    plot_abundance_maps(res.abundances.data, cube.rows, cube.cols, out / "abundances.png", lib.names)
    print(f"K {diag['K_initial']} -> {diag['K_final']}, runtime {diag['runtime_s']:.2f} s")
    if args.strict and not (diag["converged_coarse"] and diag["converged_fine"]):
        print("solver did not reach tolerance", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_eval(args) -> int:
    truth = hio.read_abundance(args.truth)
    est = hio.read_abundance(args.estimate)
    try:
        value = sre(truth, est)
    except HmuaError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    text = format_sre(value)
    print(text)
    if args.csv:
        new = not os.path.exists(args.csv) or os.path.getsize(args.csv) == 0
        try:
            with open(args.csv, "a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(["label", SRE_HEADER])
                w.writerow([args.label or os.path.basename(args.estimate), text])
        except OSError as exc:
            raise CliError(f"cannot write {args.csv}: {exc}", EXIT_IO) from exc
    return EXIT_OK


def sample_refine_sigmas(sigma0: int, rng, rounds: int = 3) -> list:
    """Random decreasing sizes, each drawn from [prev/2, prev-1] and rounded up."""
    out, prev = [], sigma0
    for i in range(rounds):
        floor = SIGMA_FLOORS[min(i, len(SIGMA_FLOORS) - 1)]
        v = max(math.ceil(rng.uniform(prev / 2.0, prev - 1.0)), floor)
        if v >= prev or v < 1:
            break
        out.append(v)
        prev = v
    return out


def statistical_trials(base: dict, sweep: dict) -> list:
    trials = int(sweep.get("trials", 500))
    rng = rng_for(int(sweep.get("seed", 0)), 5)
    ranges = {**STATISTICAL_RANGES, **{k: tuple(v) for k, v in sweep.get("ranges", {}).items()}}
    rounds = int(sweep.get("rounds", 3))
    points = []
    for _ in range(trials):
        p = {}
        for name in sorted(ranges):
            lo, hi = ranges[name]
            p[name] = int(rng.integers(lo, hi + 1)) if name == "sigma0" else float(rng.uniform(lo, hi))
        p["refine_sigmas"] = sample_refine_sigmas(p.get("sigma0", base.get("sigma0", 8)), rng, rounds)
        points.append(p)
    return points


def sensitivity_trials(base: dict, sweep: dict) -> list:
    params = sweep.get("parameters")
    if not isinstance(params, dict) or not params:
        raise CliError("sensitivity sweep needs a non-empty 'parameters' object", EXIT_USAGE)
    points = []
    for name in sorted(params):
        for v in params[name]:
            points.append({name: v, "_varied": name})
    return points


def _sweep_rows(cube, lib, truth, base_cfg: PipelineConfig, points: list, workers: int) -> list:
    base = base_cfg.to_dict()
    flats = []
    for p in points:
        d = dict(base)
        d.update({k: v for k, v in p.items() if not k.startswith("_")})
        flats.append(d)
    return evaluate_configs(cube, lib, truth, flats, workers)


def cmd_sweep(args) -> int:
    base_cfg = _pipeline_config(args.config)
    sweep = _load_config_json(args.sweep, "sweep spec")
    if not isinstance(sweep, dict):
        raise CliError("sweep spec must be a JSON object", EXIT_USAGE)
    mode = sweep.get("mode", "sensitivity")
    if mode == "statistical":
        sweep = {**sweep, "seed": _seed(args, sweep.get("seed", 0))}
        points = statistical_trials(base_cfg.to_dict(), sweep)
    elif mode == "sensitivity":
        points = sensitivity_trials(base_cfg.to_dict(), sweep)
    else:
        raise CliError(f"unknown sweep mode {mode!r}", EXIT_USAGE)

    cube = _read_cube(args)
    lib = hio.read_library(args.lib)
    truth = hio.read_abundance(args.truth)
    workers = int(args.threads or 1)
    if workers == 1:
        _limit_threads(1)
    results = _sweep_rows(cube, lib, truth, base_cfg, points, workers)

    names = sorted(base_cfg.to_dict())
    header = ["trial"] + names + [SRE_HEADER, "runtime_s", "K_final"]
    if mode == "sensitivity":
        header += ["varied", "value"]
    else:
        header += ["deviation_pct"]
        finite = [r["sre"] for r in results if np.isfinite(r["sre"])]
        best = args.reference_sre if args.reference_sre is not None else (max(finite) if finite else math.nan)
    rows, plot_rows, devs = [], [], []
    for i, (p, r) in enumerate(zip(points, results)):
        row = [i] + [_cell(r["params"][n]) for n in names] + [format_sre(r["sre"]), f"{r['runtime_s']:.4f}", _cell(r["K_final"])]
        if mode == "sensitivity":
            row += [p["_varied"], _cell(p[p["_varied"]])]
            plot_rows.append({"varied": p["_varied"], "value": p[p["_varied"]], "sre": r["sre"]})
        else:
            dev = (r["sre"] - best) / best * 100.0 if best else math.nan
            devs.append(dev)
            row += [f"{dev:.4f}"]
        rows.append(row)
    _write_csv(args.out, header, rows)
    fig_path = Path(args.out).with_suffix(".png")
    if mode == "sensitivity":
        plot_sensitivity(plot_rows, fig_path)
    else:
        plot_deviation_histogram(devs, fig_path)
    print(f"wrote {len(rows)} trials to {args.out}")
    return EXIT_OK


def cmd_grid_search(args) -> int:
    base_cfg = _pipeline_config(args.config)
    grid = _load_config_json(args.grid, "grid spec")
    if not isinstance(grid, dict) or not grid:
        raise CliError("grid spec must be a non-empty JSON object", EXIT_USAGE)
    cube = _read_cube(args)
    lib = hio.read_library(args.lib)
    truth = hio.read_abundance(args.truth)
    try:
        ranked = grid_search(cube, lib, truth, grid, base_cfg, workers=int(args.threads or 1))
    except InvalidParameter as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    keys = sorted(grid)
    header = ["rank"] + keys + [SRE_HEADER, "runtime_s", "K_final", "error"]
    rows = [
        [i] + [_cell(r["grid_point"][k]) for k in keys]
        + [format_sre(r["sre"]), f"{r['runtime_s']:.4f}", _cell(r["K_final"]), r["error"] or ""]
        for i, r in enumerate(ranked)
    ]
    _write_csv(args.out, header, rows)
    best = ranked[0]
    print(f"best {format_sre(best['sre'])} dB at {best['grid_point']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--threads", type=int, default=default(None), help="worker processes (sweeps) or BLAS threads")
    p.add_argument("--seed", type=int, default=default(None), help="random seed (overrides spec files)")
    p.add_argument("--strict", action="store_true", default=default(False), help="exit 4 if a solver does not converge")


def _cube_args(p):
    p.add_argument("--cube", required=True, help="cube header JSON")
    p.add_argument("--data", help="cube payload (default: header path with .bsq suffix)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hmua", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("library", cmd_library, "write a synthetic spectral library CSV")
    p.add_argument("--bands", type=int, default=224)
    p.add_argument("--count", type=int, default=240)
    p.add_argument("--out", required=True)

    p = add("synth", cmd_synth, "generate a synthetic scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--lib", required=True, help="library CSV")
    p.add_argument("--snr", type=float, required=True, help="SNR in dB (inf for noiseless)")
    p.add_argument("--endmembers", help="comma-separated library column ids")
    p.add_argument("--out", required=True, help="output directory")

    p = add("segment", cmd_segment, "oversegment a cube (optionally with refinement)")
    _cube_args(p)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("mua", "hmua"))
    p.add_argument("--out", required=True)

    p = add("unmix", cmd_unmix, "run MUA or HMUA")
    _cube_args(p)
    p.add_argument("--lib", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("mua", "hmua"))
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "SRE of an estimate against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--csv", help="append a row to this CSV")
    p.add_argument("--label")

    for name, func, help_ in (
        ("sweep", cmd_sweep, "sensitivity or random-parameter sweep"),
        ("grid-search", cmd_grid_search, "exhaustive grid search ranked by SRE"),
    ):
        p = add(name, func, help_)
        _cube_args(p)
        p.add_argument("--lib", required=True)
        p.add_argument("--truth", required=True)
        p.add_argument("--config", required=True, help="base pipeline config")
        if name == "sweep":
            p.add_argument("--sweep", required=True, help="sweep spec JSON")
            p.add_argument("--reference-sre", type=float, help="SRE used as the best value for deviations")
        else:
            p.add_argument("--grid", required=True, help="grid spec JSON: {key: [values]}")
        p.add_argument("--out", required=True, help="output CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (hio.IoError, hio.SizeMismatch, hio.ParseError, hio.RaggedRows, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except HmuaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
