"""Command-line entry points.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fem
from .config import ConfigError, RunConfig, load_config
from .geometry import ConfigurationError, ContactSpec, apply_regions
from .jacobian import build_jacobian, export_jacobian_csv, load_jacobian, save_jacobian
from .metrics import FitError, fit_output_model, fmax_metric, sensitivity_metric
from .protocol import (FrameFormatError, acquire_frame, parse_frame_line,
                       parse_header, read_frame_file, write_frames)
from .reconstruction import (ContractError, ReconConfig, TikhonovSolver, export_image_csv,
                             export_image_pgm, tikhonov_reconstruct)
from .serialization import fmt, fmt_row
from .studies import (StudyError, material_positioning, run_adhesion_study,
                      run_performance_map, run_thickness_study, table_i_records,
                      write_adhesion_csvs, write_manifest, write_perfmap_csv,
                      write_perfmap_pgms, write_thickness_csv)

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

log = logging.getLogger("tomotactile")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads for studies")
    p.add_argument("--grid-scale", type=float, default=None,
                   help="scale volume mesh resolution (0.5 for desk-scale runs)")
    p.add_argument("--seed", type=int, default=None, help="seed for multi-start fitting")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tomotactile", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("simulate", parents=[common], help="frames for the configured contacts")

    p = sub.add_parser("jacobian", parents=[common], help="shell Jacobian dump")
    p.add_argument("--csv", action="store_true", help="also write a CSV export")

    p = sub.add_parser("reconstruct", parents=[common], help="images from a frames file")
    p.add_argument("--jacobian", type=Path, required=True)
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--lambda-sq", type=float, default=None)

    p = sub.add_parser("reconstruct-stream", parents=[common],
                       help="stdin frame lines to stdout raster lines")
    p.add_argument("--jacobian", type=Path, required=True)
    p.add_argument("--lambda-sq", type=float, default=None)

    p = sub.add_parser("sweep", parents=[common], help="design studies")
    p.add_argument("study", choices=("perfmap", "thickness", "adhesion"))

    p = sub.add_parser("metrics", parents=[common], help="fit a force/output CSV")
    p.add_argument("--input", type=Path, required=True, help="CSV with force,output columns")
    p.add_argument("--fh", type=float, default=None,
                   help="force for the sensitivity (default: half the largest force)")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.threads is not None and args.threads < 1:
        raise UsageError("--threads must be >= 1")
    try:
        return cfg.with_overrides(threads=args.threads, grid_scale=args.grid_scale,
                                  seed=args.seed)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or (Path(cfg.output_dir) if cfg.output_dir else Path("out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    path = out / "frames.csv"
    if not cfg.contacts:
        log.warning("no contacts configured; writing an empty frames file")
        path.write_text("")
        return EXIT_OK
    base = cfg.sim.volume(cfg.gradient)
    frames, stamps = [], []
    for c in cfg.contacts:
        mesh = apply_regions(base, ContactSpec((c.x, c.y), cfg.sim.contact_diameter, c.sigma_drv))
        frames.append(acquire_frame(mesh, cfg.sim.v_cc))
        stamps.append(c.timestamp)
    write_frames(path, frames, stamps if any(s is not None for s in stamps) else None)
    log.info("wrote %d frame(s) to %s", len(frames), path)
    return EXIT_OK


def cmd_jacobian(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    jac = build_jacobian(cfg.sim.shell(), cfg.sim.v_cc, threads=cfg.sim.threads)
    save_jacobian(jac, out / "jacobian.bin")
    if args.csv:
        export_jacobian_csv(jac, out / "jacobian.csv")
    log.info("jacobian %dx%d layout=%s", *jac.shape, jac.layout_fingerprint)
    return EXIT_OK


def _load_jac(path):
    try:
        return load_jacobian(path)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _check_fingerprint(header: dict, jac, source) -> None:
    fp = header.get("layout")
    if fp is not None and fp != jac.layout_fingerprint:
        raise UsageError(f"refusing to reconstruct: {source} layout fingerprint {fp} does not "
                         f"match Jacobian layout fingerprint {jac.layout_fingerprint}")


def cmd_reconstruct(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    jac = _load_jac(args.jacobian)
    lam = args.lambda_sq if args.lambda_sq is not None else cfg.sim.lambda_sq
    rc = ReconConfig(lam, cfg.sim.raster)
    try:
        header, rows = read_frame_file(args.frames, jac.shape[0])
    except OSError as exc:
        raise UsageError(f"{args.frames}: {exc.strerror}") from exc
    _check_fingerprint(header, jac, args.frames)
    solver = TikhonovSolver(jac, rc.lambda_sq)
    for k, (_, values) in enumerate(rows):
        img = tikhonov_reconstruct(jac, values, rc, solver)
        export_image_csv(img, out / f"image_{k:04d}.csv")
        export_image_pgm(img, out / f"image_{k:04d}.pgm")
    log.info("reconstructed %d frame(s) into %s", len(rows), out)
    return EXIT_OK


def cmd_reconstruct_stream(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    cfg = _run_config(args)
    jac = _load_jac(args.jacobian)
    lam = args.lambda_sq if args.lambda_sq is not None else cfg.sim.lambda_sq
    rc = ReconConfig(lam, cfg.sim.raster)
    solver = TikhonovSolver(jac, rc.lambda_sq)
    errors = 0
    for lineno, line in enumerate(stdin, 1):
        if line.startswith("#"):
            _check_fingerprint(parse_header(line), jac, f"stream line {lineno}")
            continue
        if not line.strip():
            continue
        try:
            _, values = parse_frame_line(line, jac.shape[0])
        except FrameFormatError as exc:
            errors += 1
            print(f"line {lineno}: skipped: {exc}", file=sys.stderr)
            continue
        img = tikhonov_reconstruct(jac, values, rc, solver)
        stdout.write(fmt_row(img.raster.ravel()) + "\n")
        stdout.flush()
    if errors:
        print(f"{errors} malformed line(s) skipped", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    if args.study == "perfmap":
        failed = None
        try:
            result = run_performance_map(cfg.sweep, cfg.sim)
        except StudyError as exc:
            failed, result = exc, exc.partial
        write_perfmap_csv(result, out / "perfmap.csv")
        write_perfmap_pgms(result, out)
        table = material_positioning(table_i_records(result), result)
        with open(out / "positioning.csv", "w") as fh:
            fh.write("label,SR_n,FMAX_n,PA_n,SENS_n\n")
            for (lab, sr, fm), (_, pa, se) in zip(table.sr_fmax, table.pa_sens):
                fh.write(f"{lab},{fmt(sr)},{fmt(fm)},{fmt(pa)},{fmt(se)}\n")
            for sig, sr, fm, pa, se in table.diagonal:
                fh.write(f"uniform:{fmt(sig)},{fmt(sr)},{fmt(fm)},{fmt(pa)},{fmt(se)}\n")
        write_manifest(out / "manifest.json", cfg.echo(),
                       {**result.timings, "wall_s": time.perf_counter() - t0},
                       result.failures, {"normalization": result.normalization})
        if failed is not None:
            print(f"error: {failed}", file=sys.stderr)
            return EXIT_NUMERICAL
    elif args.study == "thickness":
        rows, _ = run_thickness_study(cfg.thickness, cfg.sim, cfg.thickness_center)
        write_thickness_csv(rows, out / "thickness.csv")
        write_manifest(out / "manifest.json", cfg.echo(),
                       {"wall_s": time.perf_counter() - t0}, [])
    else:
        res = run_adhesion_study(cfg.dots, cfg.diameters, cfg.sim)
        write_adhesion_csvs(res, out / "adhesion_position.csv", out / "adhesion_current.csv")
        write_manifest(out / "manifest.json", cfg.echo(),
                       {"wall_s": time.perf_counter() - t0}, res.skipped,
                       {"baseline_error_mm": res.baseline_error})
    return EXIT_OK


METRICS_COLUMNS = ("p1", "p2", "p3", "converged", "residual", "F_h", "SENS", "FMAX")


def read_force_output(path):
    try:
        text = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    rows = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    if rows and not _is_number(rows[0].split(",")[0]):
        rows = rows[1:]
    try:
        data = np.array([[float(v) for v in ln.split(",")[:2]] for ln in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != 2:
        raise UsageError(f"{path}: expected force,output columns")
    return data[:, 0], data[:, 1]


def _is_number(s) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def cmd_metrics(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    f, phi = read_force_output(args.input)
    try:
        fit = fit_output_model(f, phi, seed=cfg.sim.seed)
    except FitError as exc:
        raise UsageError(str(exc)) from exc
    f_h = args.fh if args.fh is not None else float(f.max()) / 2
    if not fit.converged:
        raise FitError("output-model fit did not converge")
    sens, fmax = sensitivity_metric(fit, f_h), fmax_metric(fit)
    with open(out / "metrics.csv", "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        fh.write(",".join([fmt(fit.p1), fmt(fit.p2), fmt(fit.p3), str(int(fit.converged)),
                           fmt(fit.residual), fmt(f_h), fmt(sens), fmt(fmax)]) + "\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "jacobian": cmd_jacobian,
    "reconstruct": cmd_reconstruct,
    "reconstruct-stream": cmd_reconstruct_stream,
    "sweep": cmd_sweep,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ConfigurationError, ContractError, FrameFormatError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (fem.NumericalError, fem.AssemblyError, FitError, StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
