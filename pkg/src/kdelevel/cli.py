"""Command-line front end.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
Diagnostics go to standard error; data goes to files under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import kde
from .config import load_config, write_manifest
from .experiment import ConfigError, ReplicationError, run, summarize, write_results
from .field_geometry import threshold, write_field
from .kernels import COROLLARY, THEOREM, BandwidthSchedule, KernelError, admissible_gamma_range, get_kernel, kernel_l2_norm
from .levelset import clusters_at_probability, write_labels_csv
from .models import PointsFormatError, SampleSet, read_points_csv

log = logging.getLogger("kdelevel")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("LEVELSET_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer LEVELSET_WORKERS=%r", env)
    return 1


def _verify(args, mode: str) -> int:
    try:
        cfg = load_config(args.config)
        if cfg.mode != mode:
            raise ConfigError(f"config mode is {cfg.mode!r} but this command runs {mode!r}")
        if args.seed_override is not None:
            cfg.seed_base = args.seed_override
        cfg.validate()
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        result = run(cfg, workers=_workers(args))
        paths = write_results(result, args.out)
        paths["manifest"] = write_manifest(args.out, cfg, paths)
    except (ReplicationError, OSError, ValueError) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    for row in summarize(result):
        log.info("n=%d h=%.5g mean=%.6g limit=%.6g ratio=%.4f +- %.4f failures=%d",
                 row.n, row.h, row.mean, row.limit, row.ratio, row.ratio_se, row.failures)
    return EXIT_OK


def cmd_verify_theorem(args) -> int:
    return _verify(args, THEOREM)


def cmd_verify_corollary(args) -> int:
    return _verify(args, COROLLARY)


def cmd_cluster(args) -> int:
    try:
        points = read_points_csv(args.points)
    except FileNotFoundError:
        log.error("points file not found: %s", args.points)
        return EXIT_CONFIG
    except PointsFormatError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    n, k = points.shape
    if n < 2:
        log.error("need at least 2 points, got %d", n)
        return EXIT_CONFIG
    if not 0.0 <= args.p <= 1.0:
        log.error("probability p must lie in [0, 1], got %s", args.p)
        return EXIT_CONFIG
    if args.h is not None and args.gamma is not None:
        log.error("give either --h or --gamma, not both")
        return EXIT_CONFIG
    h = args.h if args.h is not None else BandwidthSchedule(args.c, args.gamma if args.gamma is not None else 0.2)(n)
    try:
        kernel = get_kernel(args.kernel, k)
        spec = kde.KdeSpec(kernel, h, SampleSet(points, seed=-1, model_name=str(args.points)))
    except (KernelError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        grid = kde.grid_for(spec, args.grid_factor * h)
        field = kde.evaluate_grid(spec, grid)
        result = clusters_at_probability(field, args.p, args.tol)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_labels_csv(out / "labels.csv", result)
        write_field(out / "levelset.bin", threshold(field, result.t_n))
        write_field(out / "density.bin", field)
        report = {
            "n": n, "k": k, "h": h, "kernel": args.kernel, "p": args.p,
            "t_n": result.t_n, "mass_at_t": result.solution.mass_at_t,
            "clusters": result.count, "volumes": result.volumes,
            "grid": {"origin": list(grid.origin), "spacing": grid.spacing, "dims": list(grid.dims)},
        }
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    except (OSError, ValueError, MemoryError) as exc:
        log.error("cluster extraction failed: %s", exc)
        return EXIT_RUNTIME
    log.info("t_n=%.6g clusters=%d", result.t_n, result.count)
    return EXIT_OK


def cmd_kernel_info(args) -> int:
    try:
        kernel = get_kernel(args.kernel, args.dim)
    except (KernelError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    print(f"kernel: {kernel.name}  dimension: {kernel.dimension}")
    print(f"normalization c_k: {kernel.normalization:.12g}")
    print(f"L2 norm int K^2: {kernel_l2_norm(kernel):.12g}")
    lo, hi = admissible_gamma_range(args.dim, THEOREM)
    print(f"theorem gamma range: ({lo:.6g}, {hi:.6g})")
    if args.dim >= 2:
        lo, hi = admissible_gamma_range(args.dim, COROLLARY)
        print(f"corollary gamma range: ({lo:.6g}, {hi:.6g})")
    else:
        print("corollary gamma range: none (requires k >= 2)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdelevel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, help_ in [
        ("verify-theorem", cmd_verify_theorem, "Monte Carlo check of the fixed-level limit"),
        ("verify-corollary", cmd_verify_corollary, "Monte Carlo check of the fixed-probability limit"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, help="parallel replications (env LEVELSET_WORKERS)")
        p.add_argument("--seed-override", type=int, help="replace seed_base from the config")
        p.set_defaults(func=func)

    p = sub.add_parser("cluster", help="clusters of the plug-in level set with probability p")
    p.add_argument("--points", required=True, help="CSV with header x1,...,xk")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--kernel", default="epanechnikov")
    p.add_argument("--h", type=float, help="fixed bandwidth")
    p.add_argument("--gamma", type=float, help="bandwidth exponent: h = c * n^-gamma (default 0.2)")
    p.add_argument("--c", type=float, default=1.0, help="bandwidth prefactor with --gamma")
    p.add_argument("--grid-factor", type=float, default=0.25, help="grid spacing as a fraction of h")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("kernel-info", help="print the kernel L2 norm and admissible bandwidth exponents")
    p.add_argument("--kernel", default="epanechnikov")
    p.add_argument("--dim", type=int, default=2)
    p.set_defaults(func=cmd_kernel_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    return args.func(args)
