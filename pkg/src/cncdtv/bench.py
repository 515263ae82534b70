"""Grid search over (lambda, 1/alpha), Table-style reports, and convergence
traces.

The search has two stages. A *scan* walks each (image, variant, 1/alpha)
row through the lambda values in ascending order, warm-starting every solve
from its predecessor and stopping on a loose iterate tolerance; this is a
continuation pass whose PSNR values rank the cells cheaply. The top scan
cells per (image, variant) are then re-solved from a cold start at the
fixed protocol budget (``report_iters`` iterations, no early stop) and the
best of those becomes the reported row, so every ``report.csv`` number is
exactly reproducible with a single ``denoise`` invocation.

Rows and reruns are independent work items executed in a process pool;
results are assembled by key and sorted before writing, so reports are
byte-stable across runs regardless of scheduling. Wall-clock timings never
enter ``report.csv`` unless explicitly requested (``timings=True``); they
always go to the ``timings.csv`` sidecar.
"""

from __future__ import annotations

import concurrent.futures
import csv
import math
import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .directions import DirectionField, estimate_directions
from .grids import Image
from .imaging import NoiseSpec, add_noise, psnr, residual_map, write_image
from .solver import CncParams, SolverConfig, SolverVariant, solve

DEFAULT_LAMBDAS = tuple(float(k) for k in range(1, 81))
DEFAULT_INV_ALPHAS = tuple(round(0.10 + 0.05 * k, 2) for k in range(19))
ALL_VARIANTS = (
    SolverVariant.C_TV,
    SolverVariant.CNC_TV,
    SolverVariant.C_DTV,
    SolverVariant.CNC_DTV,
)
DEFAULT_REPORT_ITERS = 3000
DEFAULT_SCAN_TOL = 3e-4
SCAN_CAP = 6000
RERUN_TOP_K = 3


@dataclass(frozen=True)
class GridSpec:
    """Search grid; TV variants ignore ``inv_alpha_values``."""

    lambda_values: tuple = DEFAULT_LAMBDAS
    inv_alpha_values: tuple = DEFAULT_INV_ALPHAS
    variants: tuple = ALL_VARIANTS

    def __post_init__(self):
        if not self.lambda_values or not self.inv_alpha_values or not self.variants:
            raise ValueError("grid lists must be nonempty")
        if any(lam <= 0 for lam in self.lambda_values):
            raise ValueError("lambda values must be positive")
        if any(not (0.0 < ia <= 1.0) for ia in self.inv_alpha_values):
            raise ValueError("1/alpha values must lie in (0, 1]")

    def rows(self, variant: SolverVariant):
        """inv_alpha values describing the rows of one variant."""
        return self.inv_alpha_values if variant.is_directional else (None,)


@dataclass
class BenchRow:
    image: str
    variant: SolverVariant
    best_psnr: float
    best_lambda: float
    best_inv_alpha: float | None
    iters: int
    runtime_s: float


@dataclass
class BenchReport:
    rows: list = dc_field(default_factory=list)
    # (image, variant, lam, inv_alpha, scan_psnr|None, scan_iters, error)
    cells: list = dc_field(default_factory=list)

    def to_csv(self, path, timings: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "image",
                    "variant",
                    "best_psnr",
                    "best_lambda",
                    "best_inv_alpha",
                    "iters",
                    "runtime_s",
                ]
            )
            for r in self.rows:
                w.writerow(
                    [
                        r.image,
                        r.variant.value,
                        f"{r.best_psnr:.6f}",
                        f"{r.best_lambda:g}",
                        "" if r.best_inv_alpha is None else f"{r.best_inv_alpha:g}",
                        r.iters,
                        f"{r.runtime_s:.3f}" if timings else "",
                    ]
                )

    def cells_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["image", "variant", "lambda", "inv_alpha", "psnr", "iters", "error"]
            )
            for image, variant, lam, ia, val, iters, err in self.cells:
                w.writerow(
                    [
                        image,
                        variant.value,
                        f"{lam:g}",
                        "" if ia is None else f"{ia:g}",
                        "" if val is None else f"{val:.6f}",
                        iters,
                        err or "",
                    ]
                )

    def timings_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image", "variant", "runtime_s"])
            for r in self.rows:
                w.writerow([r.image, r.variant.value, f"{r.runtime_s:.3f}"])

    def best(self, image: str, variant: SolverVariant) -> BenchRow:
        for r in self.rows:
            if r.image == image and r.variant == variant:
                return r
        raise KeyError((image, variant))


# --- worker-side machinery --------------------------------------------------

_WORKER: dict = {}


def _worker_init(payload):
    _WORKER["images"] = payload


def _make_config(variant, lam, inv_alpha, theta, n, rho, iters, tol, dual_scale=1.0):
    rho_eff = rho if variant.is_cnc else 0.0
    fld = None
    if variant.is_directional:
        alpha = 1.0 / inv_alpha
        fld = DirectionField(alpha=np.full(n, alpha), theta=theta)
    return SolverConfig(
        params=CncParams(lam=lam, rho=rho_eff),
        variant=variant,
        field=fld,
        max_iters=iters,
        tol=tol,
        dual_scale=dual_scale,
    )


def _scan_row(task):
    """Warm-started continuation along ascending lambda for one row."""
    image_name, variant_value, inv_alpha, lambdas, rho, tol = task
    clean, noisy, theta = _WORKER["images"][image_name]
    variant = SolverVariant(variant_value)
    t0 = time.perf_counter()
    out = []
    state = None
    for lam in lambdas:
        try:
            config = _make_config(
                variant, lam, inv_alpha, theta, clean.n, rho, SCAN_CAP, tol
            )
            state, trace = solve(noisy, config, init=state, trace_every=0)
            out.append((lam, psnr(state.x, clean), trace.iters_run, None))
        except Exception as exc:  # recorded per-cell; the scan restarts cold
            state = None
            out.append((lam, None, 0, f"{type(exc).__name__}: {exc}"))
    return (image_name, variant_value, inv_alpha), out, time.perf_counter() - t0


def _rerun_cell(task):
    """Cold protocol-budget solve of one candidate cell."""
    image_name, variant_value, lam, inv_alpha, rho, iters = task
    clean, noisy, theta = _WORKER["images"][image_name]
    variant = SolverVariant(variant_value)
    t0 = time.perf_counter()
    config = _make_config(variant, lam, inv_alpha, theta, clean.n, rho, iters, 0.0)
    state, _ = solve(noisy, config, trace_every=0)
    value = psnr(state.x, clean)
    return (image_name, variant_value, lam, inv_alpha), value, time.perf_counter() - t0


def _pool_map(fn, tasks, payload, threads):
    if threads <= 1:
        _worker_init(payload)
        for task in tasks:
            yield fn(task)
        return
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=threads, initializer=_worker_init, initargs=(payload,)
    ) as pool:
        yield from pool.map(fn, tasks, chunksize=1)


def run_grid_search(
    images: dict[str, Image],
    grid: GridSpec,
    noise: NoiseSpec,
    out_dir,
    rho: float = 0.99,
    report_iters: int = DEFAULT_REPORT_ITERS,
    scan_tol: float = DEFAULT_SCAN_TOL,
    threads: int = 4,
    sigma_g: float = 1.0,
    rho_st: float = 2.0,
    directions_from: str = "noisy",
    timings: bool = False,
) -> BenchReport:
    """Run the two-stage search and write report/cells/timings CSVs.

    Direction fields for the DTV variants are estimated once per image,
    from the noisy observation by default. The reported best cell per
    (image, variant) maximizes the protocol-budget PSNR over the top scan
    candidates, with ties broken toward smaller lambda, then larger
    1/alpha; it is finally re-solved with tracing to produce the denoised
    image, residual maps, and trace CSV artifacts.
    """
    os.makedirs(out_dir, exist_ok=True)
    payload = {}
    for name, clean in images.items():
        noisy = add_noise(clean, noise)
        src = clean if directions_from == "clean" else noisy
        theta = estimate_directions(src, sigma_g=sigma_g, rho_st=rho_st).theta
        payload[name] = (clean, noisy, theta)
        write_image(os.path.join(out_dir, f"{name}_noisy.npy"), noisy)

    lambdas = tuple(sorted(grid.lambda_values))
    scan_tasks = []
    for name in sorted(images):
        for variant in grid.variants:
            for ia in grid.rows(variant):
                scan_tasks.append((name, variant.value, ia, lambdas, rho, scan_tol))

    scans = {}
    row_runtime = {}
    for key, cells, dt in _pool_map(_scan_row, scan_tasks, payload, threads):
        scans[key] = cells
        row_runtime[key] = dt

    report = BenchReport()
    candidates = {}
    for name in sorted(images):
        for variant in grid.variants:
            ranked = []
            for ia in grid.rows(variant):
                for lam, val, iters_run, err in scans[(name, variant.value, ia)]:
                    report.cells.append((name, variant, lam, ia, val, iters_run, err))
                    if val is not None:
                        ranked.append((-val, lam, -(ia or 0.0), ia))
            if not ranked:
                raise RuntimeError(f"every scan cell failed for {name}/{variant.value}")
            ranked.sort()
            candidates[(name, variant.value)] = [
                (lam, ia) for _, lam, _, ia in ranked[:RERUN_TOP_K]
            ]

    rerun_tasks = []
    for name in sorted(images):
        for variant in grid.variants:
            for lam, ia in candidates[(name, variant.value)]:
                rerun_tasks.append((name, variant.value, lam, ia, rho, report_iters))
    rerun_vals = {}
    rerun_runtime = {}
    for key, value, dt in _pool_map(_rerun_cell, rerun_tasks, payload, threads):
        rerun_vals[key] = value
        rerun_runtime[key] = dt

    for name in sorted(images):
        clean, noisy, theta = payload[name]
        for variant in grid.variants:
            best = None
            for lam, ia in candidates[(name, variant.value)]:
                value = rerun_vals[(name, variant.value, lam, ia)]
                cand = (-value, lam, -(ia if ia is not None else 0.0))
                if best is None or cand < best[0]:
                    best = (cand, lam, ia, value)
            _, lam, ia, value = best
            runtime = sum(
                row_runtime[(name, variant.value, r)] for r in grid.rows(variant)
            ) + sum(
                rerun_runtime[(name, variant.value, lam2, ia2)]
                for lam2, ia2 in candidates[(name, variant.value)]
            )
            report.rows.append(
                BenchRow(
                    image=name,
                    variant=variant,
                    best_psnr=value,
                    best_lambda=lam,
                    best_inv_alpha=ia,
                    iters=report_iters,
                    runtime_s=runtime,
                )
            )
            # artifacts for the winning cell (identical config: traced re-solve
            # reproduces the reported PSNR bit for bit)
            config = _make_config(variant, lam, ia, theta, clean.n, rho, report_iters, 0.0)
            state, trace = solve(noisy, config, clean=clean)
            assert abs(psnr(state.x, clean) - value) == 0.0
            tag = f"{name}_{variant.value}"
            write_image(os.path.join(out_dir, f"{tag}_denoised.pgm"), state.x)
            err_map, err_norm = residual_map(state.x, clean)
            write_image(os.path.join(out_dir, f"{tag}_residual.pgm"), err_norm)
            _residual_csv(os.path.join(out_dir, f"{tag}_residual.csv"), err_map)
            trace.to_csv(os.path.join(out_dir, f"{tag}_trace.csv"))

    report.to_csv(os.path.join(out_dir, "report.csv"), timings=timings)
    report.cells_to_csv(os.path.join(out_dir, "cells.csv"))
    report.timings_to_csv(os.path.join(out_dir, "timings.csv"))
    return report


def _residual_csv(path, err: Image) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        grid = err.grid()
        for r in range(err.height):
            for c in range(err.width):
                w.writerow([r, c, f"{grid[r, c]:.9g}"])


def run_convergence(
    clean: Image,
    noisy: Image,
    out_csv,
    variants=ALL_VARIANTS,
    lam: float = 10.0,
    rho: float = 0.99,
    inv_alpha: float = 0.45,
    iters: int = 3000,
    ref_iters: int = 20000,
    sigma_g: float = 1.0,
    rho_st: float = 2.0,
    dual_scale: float = 32.0,
):
    """Per-iteration PSNR and log10 relative distance to a long reference run.

    For each variant, first runs ``ref_iters`` iterations to stand in for
    the limit point, then re-runs ``iters`` iterations recording
    ``log10(||z_l - z_inf|| / ||z_inf||)`` and PSNR versus the clean image.
    Returns ``{variant: trace}`` and writes ``iter,variant,psnr,
    log10_rel_dist`` rows.

    The default ``dual_scale=32`` resolves the dual blocks finely (the step
    rule holds at any scale); with the balanced split the consensus blocks
    dominate the iterate-distance tail and the curves flatten an order of
    magnitude higher.
    """
    if ref_iters <= iters:
        raise ValueError("ref_iters must exceed iters")
    theta = estimate_directions(noisy, sigma_g=sigma_g, rho_st=rho_st).theta
    traces = {}
    for variant in variants:
        config = _make_config(
            variant, lam, inv_alpha, theta, clean.n, rho, ref_iters, 0.0, dual_scale
        )
        ref_state, _ = solve(noisy, config, trace_every=0)
        config = _make_config(
            variant, lam, inv_alpha, theta, clean.n, rho, iters, 0.0, dual_scale
        )
        _, trace = solve(noisy, config, clean=clean, ref=ref_state)
        traces[variant] = trace

    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "variant", "psnr", "log10_rel_dist"])
        for variant in variants:
            tr = traces[variant]
            for i in range(len(tr)):
                dist = tr.dist_to_ref[i]
                logd = math.log10(dist) if dist > 0 else -math.inf
                w.writerow(
                    [tr.iterations[i], variant.value, f"{tr.psnr[i]:.6f}", f"{logd:.6f}"]
                )
    return traces
