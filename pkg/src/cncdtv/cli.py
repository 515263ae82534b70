"""Command-line front end.

Subcommands: ``generate``, ``add-noise``, ``estimate-directions``,
``denoise``, ``grid-search``, ``convergence``. A flat ``key=value`` config
file can seed any flag (``--config``); explicit flags win. Exit codes:
0 success, 1 usage, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import warnings

import numpy as np

from .bench import (
    ALL_VARIANTS,
    DEFAULT_REPORT_ITERS,
    DEFAULT_SCAN_TOL,
    GridSpec,
    run_convergence,
    run_grid_search,
)
from .directions import estimate_directions, load_direction_csv, save_direction_csv
from .grids import Image
from .imaging import (
    GeneratorSpec,
    NoiseSpec,
    PgmFormatError,
    add_noise,
    generate,
    psnr,
    read_image,
    residual_map,
    write_image,
)
from .solver import (
    CncParams,
    DivergenceError,
    SolverConfig,
    SolverVariant,
    solve,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_values(text: str) -> tuple:
    """Grid list syntax: 'a,b,c' or 'start:stop:step' (inclusive)."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 10) for k in range(count))
    return tuple(float(t) for t in text.split(","))


def _load_config_defaults(argv):
    """Extract --config and return its key=value pairs (underscored keys)."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return {}
    defaults = {}
    with open(known.config) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, _, value = line.partition("=")
            defaults[key.strip().replace("-", "_")] = value.strip()
    return defaults


def _warn_to_stderr():
    return warnings.catch_warnings(record=True)


def _print_warnings(records):
    for w in records:
        print(f"warning: {w.message}", file=sys.stderr)


def _field_for(args, noisy: Image):
    if getattr(args, "directions", None):
        fld = load_direction_csv(args.directions)
        if args.inv_alpha is not None:
            fld = fld.with_alpha(1.0 / args.inv_alpha)
        return fld
    inv_alpha = args.inv_alpha if args.inv_alpha is not None else 0.5
    fld = estimate_directions(
        noisy,
        sigma_g=args.sigma_g,
        rho_st=args.rho_st,
        alpha_global=1.0 / inv_alpha,
        orientation=args.orientation,
    )
    return fld


# --- subcommands ------------------------------------------------------------


def _cmd_generate(args) -> int:
    options = {}
    if args.angle_deg is not None:
        options["angle_deg"] = args.angle_deg
    if args.period is not None:
        options["period"] = args.period
    if args.sharpness is not None:
        options["sharpness"] = args.sharpness
    spec = GeneratorSpec(
        kind=args.kind,
        width=args.size if args.width is None else args.width,
        height=args.size if args.height is None else args.height,
        seed=args.seed,
        options=options,
    )
    write_image(args.out, generate(spec))
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_add_noise(args) -> int:
    img = read_image(args.input)
    noisy = add_noise(img, NoiseSpec(sigma_e=args.sigma_e, seed=args.seed))
    clipped = int(np.sum((noisy.data < 0) | (noisy.data > 1)))
    write_image(args.out, noisy)
    if clipped and not str(args.out).endswith(".npy"):
        print(
            f"warning: {clipped} noisy pixels left [0,1] and were clamped by the "
            "PGM encoding; use a .npy output to keep them",
            file=sys.stderr,
        )
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_estimate_directions(args) -> int:
    img = read_image(args.input)
    fld = estimate_directions(
        img,
        sigma_g=args.sigma_g,
        rho_st=args.rho_st,
        alpha_global=args.alpha,
        orientation=args.orientation,
    )
    save_direction_csv(args.out, fld)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_denoise(args) -> int:
    noisy = read_image(args.input)
    clean = read_image(args.clean) if args.clean else None
    variant = SolverVariant(args.variant)
    fld = _field_for(args, noisy) if variant.is_directional else None
    config = SolverConfig(
        params=CncParams(lam=args.lam, rho=args.rho),
        variant=variant,
        field=fld,
        max_iters=args.iters,
        tol=args.tol,
        engine=args.engine,
    )
    with _warn_to_stderr() as records:
        state, trace = solve(
            noisy, config, clean=clean, record_objective=not args.no_objective
        )
    _print_warnings(records)

    os.makedirs(args.out_dir, exist_ok=True)
    write_image(os.path.join(args.out_dir, "denoised.pgm"), state.x)
    trace.to_csv(os.path.join(args.out_dir, "trace.csv"))
    with open(os.path.join(args.out_dir, "config.txt"), "w") as fh:
        fh.write(config.to_kv())
    if clean is not None:
        err_map, err_norm = residual_map(state.x, clean)
        write_image(os.path.join(args.out_dir, "residual.pgm"), err_norm)
        print(f"psnr={psnr(state.x, clean):.6f}")
    print(f"wrote {args.out_dir}/denoised.pgm")
    return EXIT_OK


def _cmd_grid_search(args) -> int:
    images = {}
    for path in args.images:
        name = os.path.splitext(os.path.basename(path))[0]
        images[name] = read_image(path)
    grid = GridSpec(
        lambda_values=_parse_values(args.lambda_grid),
        inv_alpha_values=_parse_values(args.inv_alpha_grid),
        variants=tuple(SolverVariant(v) for v in args.variants.split(",")),
    )
    report = run_grid_search(
        images,
        grid,
        NoiseSpec(sigma_e=args.sigma_e, seed=args.seed),
        args.out_dir,
        rho=args.rho,
        report_iters=args.iters,
        scan_tol=args.tol,
        threads=args.threads,
        sigma_g=args.sigma_g,
        rho_st=args.rho_st,
        directions_from=args.directions_from,
        timings=args.timings,
    )
    for row in report.rows:
        extra = "" if row.best_inv_alpha is None else f" (1/a={row.best_inv_alpha:g})"
        print(
            f"{row.image:12s} {row.variant.value:8s} best PSNR {row.best_psnr:.2f} dB "
            f"at lambda={row.best_lambda:g}{extra}"
        )
    print(f"report: {os.path.join(args.out_dir, 'report.csv')}")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    clean = read_image(args.image)
    noisy = add_noise(clean, NoiseSpec(sigma_e=args.sigma_e, seed=args.seed))
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    run_convergence(
        clean,
        noisy,
        args.out,
        variants=tuple(SolverVariant(v) for v in args.variants.split(",")),
        lam=args.lam,
        rho=args.rho,
        inv_alpha=args.inv_alpha if args.inv_alpha is not None else 0.45,
        iters=args.iters,
        ref_iters=args.ref_iters,
        sigma_g=args.sigma_g,
        rho_st=args.rho_st,
        dual_scale=args.dual_scale,
    )
    print(f"wrote {args.out}")
    return EXIT_OK


# --- parser wiring ----------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="flat key=value file seeding these flags")
    p.add_argument("--sigma-g", type=float, default=1.0, dest="sigma_g",
                   help="gradient scale for direction estimation (px)")
    p.add_argument("--rho-st", type=float, default=2.0, dest="rho_st",
                   help="structure-tensor smoothing scale (px)")
    p.add_argument("--orientation", choices=("gradient", "level-line"),
                   default="gradient",
                   help="which structure-tensor eigendirection feeds theta")


def build_parser() -> _Parser:
    parser = _Parser(prog="cncdtv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic test image")
    p.add_argument("--kind", required=True, choices=("texture", "barcode", "geometric"))
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--angle-deg", type=float, dest="angle_deg")
    p.add_argument("--period", type=float)
    p.add_argument("--sharpness", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("add-noise", help="add seeded Gaussian noise to an image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-e", type=float, default=0.1, dest="sigma_e")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_add_noise)

    p = sub.add_parser("estimate-directions", help="structure-tensor angles to CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=2.0)
    _add_common(p)
    p.set_defaults(func=_cmd_estimate_directions)

    p = sub.add_parser("denoise", help="run one denoising solve")
    p.add_argument("--in", dest="input", required=True, help="noisy image (pgm/npy)")
    p.add_argument("--clean", help="ground truth for PSNR reporting")
    p.add_argument("--variant", default="c-tv",
                   choices=[v.value for v in ALL_VARIANTS])
    p.add_argument("--lambda", type=float, default=20.0, dest="lam")
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--inv-alpha", type=float, dest="inv_alpha")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--directions", help="load theta/alpha from CSV instead of estimating")
    p.add_argument("--engine", default="auto", choices=("auto", "numpy", "numba"))
    p.add_argument("--no-objective", action="store_true",
                   help="skip per-iteration objective evaluation in the trace")
    p.add_argument("--out-dir", default="denoise-out", dest="out_dir")
    _add_common(p)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("grid-search", help="PSNR grid search over lambda and 1/alpha")
    p.add_argument("--images", nargs="+", required=True, help="clean input images")
    p.add_argument("--sigma-e", type=float, default=0.1, dest="sigma_e")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--iters", type=int, default=DEFAULT_REPORT_ITERS,
                   help="protocol budget for the reported best cells")
    p.add_argument("--tol", type=float, default=DEFAULT_SCAN_TOL,
                   help="iterate tolerance of the warm-started scan stage")
    p.add_argument("--threads", type=int, default=4)
    p.add_argument(
        "--lambda-grid",
        default="1:80:1",
        dest="lambda_grid",
        help="comma list or start:stop:step (default 1:80:1)",
    )
    p.add_argument(
        "--inv-alpha-grid",
        default="0.1:1.0:0.05",
        dest="inv_alpha_grid",
        help="comma list or start:stop:step (default 0.1:1.0:0.05)",
    )
    p.add_argument("--variants", default=",".join(v.value for v in ALL_VARIANTS))
    p.add_argument("--directions-from", choices=("noisy", "clean"), default="noisy",
                   dest="directions_from")
    p.add_argument("--timings", action="store_true",
                   help="put wall-clock runtimes into report.csv (non-deterministic)")
    p.add_argument("--out-dir", default="grid-out", dest="out_dir")
    _add_common(p)
    p.set_defaults(func=_cmd_grid_search)

    p = sub.add_parser("convergence", help="per-iteration PSNR and distance curves")
    p.add_argument("--image", required=True, help="clean image path")
    p.add_argument("--sigma-e", type=float, default=0.1, dest="sigma_e")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda", type=float, default=10.0, dest="lam")
    p.add_argument("--rho", type=float, default=0.99)
    p.add_argument("--inv-alpha", type=float, dest="inv_alpha")
    p.add_argument("--iters", type=int, default=3000)
    p.add_argument("--ref-iters", type=int, default=20000, dest="ref_iters")
    p.add_argument("--dual-scale", type=float, default=32.0, dest="dual_scale",
                   help="dual/primal step split factor (step rule holds for any value)")
    p.add_argument("--variants", default=",".join(v.value for v in ALL_VARIANTS))
    p.add_argument("--out", default="convergence.csv")
    _add_common(p)
    p.set_defaults(func=_cmd_convergence)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        defaults = _load_config_defaults(argv)
    except OSError as exc:
        print(f"cncdtv: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"cncdtv: {exc}", file=sys.stderr)
        return EXIT_USAGE

    parser = build_parser()
    if defaults:
        try:
            for sp in parser._subparsers._group_actions[0].choices.values():
                conv = {}
                for action in sp._actions:
                    if action.dest not in defaults:
                        continue
                    raw = defaults[action.dest]
                    if isinstance(action.default, bool):
                        conv[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                    elif action.type is not None:
                        conv[action.dest] = action.type(raw)
                    else:
                        conv[action.dest] = raw
                sp.set_defaults(**conv)
        except ValueError as exc:
            print(f"cncdtv: bad config value: {exc}", file=sys.stderr)
            return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"cncdtv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PgmFormatError as exc:
        print(f"cncdtv: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"cncdtv: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"cncdtv: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ArithmeticError) as exc:
        print(f"cncdtv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
