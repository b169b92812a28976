"""Command-line front end.

    rabireset simulate  --config run.yaml [--out DIR] [--seed N] [--workers N] [--tol F] [--no-plots]
    rabireset calibrate (--input shifts.csv | --config ramsey.yaml) [...]
    rabireset tomo      --input samples.csv [--threshold F] [--reconstruct DIM]
    rabireset fit       --input data.csv [--model piecewise|exponential|cosine] [--form corrected|printed]

``RABIRESET_OUT`` and ``RABIRESET_WORKERS`` override the config's output
directory and worker count; command-line flags override both.  Config and
usage failures exit with status 2, run failures with 1.  Either way a JSON
error record goes to stderr (and to ``error.json`` in the output directory
when it is known).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, plots, records
from .config import ENV_OUT, ENV_WORKERS, ConfigError, RunConfig, load_config, template
from .protocols import run_experiment
from .tomography import CharSamples, extract_nbar, reconstruct_state, vacuum_probability

DEFAULT_OUT = "rabireset_out"
EXIT_CONFIG, EXIT_RUN = 2, 1


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--out", type=Path, help=f"output directory (env {ENV_OUT})")
    common.add_argument("--seed", type=int, help="RNG seed (non-negative)")
    common.add_argument("--workers", type=int, help=f"parallel worker processes (env {ENV_WORKERS})")
    common.add_argument("--tol", type=float, help="integrator relative tolerance")
    common.add_argument("--no-plots", action="store_true", help="skip PNG rendering")

    p = argparse.ArgumentParser(prog="rabireset", description="Rabi-driven reset simulator and analysis tools")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the experiment in --config")
    cal = sub.add_parser("calibrate", parents=[common], help="sideband amplitude scale from Stark shifts")
    cal.add_argument("--input", type=Path, help="CSV with columns setting and shift_mhz (or shift_rad_per_us)")
    tomo = sub.add_parser("tomo", parents=[common], help="photon number from characteristic-function samples")
    tomo.add_argument("--input", type=Path, required=True, help="CSV with re_alpha, im_alpha, re_C, im_C")
    tomo.add_argument("--threshold", type=float, default=0.8)
    tomo.add_argument("--reconstruct", type=int, metavar="DIM", help="also reconstruct the state on DIM levels")
    fit = sub.add_parser("fit", parents=[common], help="fit a decay or oscillation curve from CSV")
    fit.add_argument("--input", type=Path, required=True, help="CSV; time in the first column unless --x is given")
    fit.add_argument("--model", choices=("piecewise", "exponential", "cosine"), default="piecewise")
    fit.add_argument("--form", choices=analysis.FORMS, default="corrected")
    fit.add_argument("--x", default=None, help="time column name")
    fit.add_argument("--y", default=None, help="value column name")
    return p


def _resolve(args, cfg: RunConfig | None) -> tuple[Path, int]:
    out = args.out or (Path(os.environ[ENV_OUT]) if os.environ.get(ENV_OUT) else None)
    if out is None:
        out = Path(cfg.out) if cfg is not None and cfg.out else Path(DEFAULT_OUT)
    if args.workers is not None:
        workers = args.workers
    elif os.environ.get(ENV_WORKERS):
        try:
            workers = int(os.environ[ENV_WORKERS])
        except ValueError:
            raise UsageError(f"{ENV_WORKERS} must be an integer, got {os.environ[ENV_WORKERS]!r}") from None
    else:
        workers = cfg.workers if cfg is not None else 1
    if workers < 1:
        raise UsageError("workers must be >= 1")
    return out, workers


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        cfg.seed = args.seed
    if args.tol is not None:
        if not args.tol > 0:
            raise UsageError("--tol must be > 0")
        cfg.tol = args.tol
    return cfg


def _write_report(out: Path, name: str, rows, title: str) -> Path:
    path = out / f"{name}.csv"
    path.write_text(analysis.report_csv(rows))
    print(analysis.format_report(rows, title))
    return path


# --- subcommands ---------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig, out: Path, workers: int) -> dict:
    spec = cfg.to_spec()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        results = run_experiment(spec, workers)
    files = []
    summaries = []
    for i, res in enumerate(results):
        prefix = f"point_{i:03d}"
        for name, table in res.tables().items():
            files.append(records.write_csv(out / f"{prefix}_{name}.csv", table.columns, table.rows).name)
        summary = res.summary()
        summaries.append(summary)
        records.write_json(
            out / f"{prefix}.meta.json",
            {"frame": summary.get("frame"), "params": res_params(res, spec), "seed": cfg.seed, "tol": cfg.tol},
        )
        files.append(f"{prefix}.meta.json")
        if not args.no_plots:
            files += [p.name for p in plots.plot_result(res, out, prefix)]
    records.write_summary(out / "summary.csv", summaries)
    files.append("summary.csv")
    if spec.kind == "coupling_sweep" and len(results) > 1:
        from .protocols import sweep_report

        rep = sweep_report(results)
        rows = [(float(g), float(r), float(e), float(z)) for g, r, e, z in
                zip(rep.g_m, rep.max_rate, rep.max_rate_err, rep.sigma_z_final)]
        records.write_csv(out / "sweep.csv", ("g_m_over_kappa", "max_rate_photons_per_us", "max_rate_stderr",
                                              "sigma_z_eff_final"), rows)
        files.append("sweep.csv")
    notes = sorted({f"{w.category.__name__}: {w.message}" for w in caught})
    for n in notes:
        print(f"warning: {n}", file=sys.stderr)
    _print_summary(summaries)
    return {"files": sorted(files), "warnings": notes, "points": len(results)}


def res_params(res, spec) -> dict:
    params = getattr(res, "params", spec.params)
    return params.to_dict()


def _print_summary(summaries):
    for i, s in enumerate(summaries):
        print(f"[point {i}] {s.get('kind')} ({s.get('frame')})")
        for k, v in s.items():
            if k in ("kind", "frame"):
                continue
            unit = records.unit_of(k) if not isinstance(v, str) else ""
            print(f"  {k:34s} {records.fmt(v)} {unit if unit != '1' else ''}".rstrip())


def cmd_calibrate(args, cfg: RunConfig | None, out: Path, workers: int) -> dict:
    if args.input is not None:
        params = (cfg or template("driven_ramsey")).system_params()
        header, _ = records.read_csv(args.input)
        settings, = records.read_columns(args.input, ["setting"])
        if "shift_rad_per_us" in header:
            shifts, = records.read_columns(args.input, ["shift_rad_per_us"])
        elif "shift_mhz" in header:
            shifts = records.read_columns(args.input, ["shift_mhz"])[0] * 2 * math.pi
        else:
            raise ValueError(f"{args.input}: needs a shift_mhz or shift_rad_per_us column")
        if "flagged" in header:
            keep = records.read_columns(args.input, ["flagged"])[0] == 0
            settings, shifts = settings[keep], shifts[keep]
        cal = analysis.calibrate_sideband(settings, shifts, params.chi_m, params.omega_rabi, params.kappa_m)
        files = [_write_report(out, "calibration", cal.report(), "sideband calibration").name]
        return {"files": files, "scale_rad_per_us": cal.scale}
    if cfg is None:
        raise UsageError("calibrate needs --input or --config")
    if cfg.experiment != "driven_ramsey":
        raise ConfigError("experiment", "calibrate runs driven_ramsey configurations only")
    info = cmd_simulate(args, cfg, out, workers)
    args.input = out / "point_000_shifts.csv"
    cal = cmd_calibrate(args, cfg, out, workers)
    info["files"] = sorted(info["files"] + cal["files"])
    info["scale_rad_per_us"] = cal["scale_rad_per_us"]
    return info


def cmd_tomo(args, cfg, out: Path, workers: int) -> dict:
    samples = CharSamples.from_csv(args.input)
    est = extract_nbar(samples, args.threshold)
    rows = [
        analysis.ReportRow("nbar", est.nbar, est.uncertainty, "photons"),
        analysis.ReportRow("threshold", est.threshold, 0.0, "1"),
        analysis.ReportRow("points_used", est.points_used, 0.0, "count"),
    ]
    if args.reconstruct:
        rec = reconstruct_state(samples, args.reconstruct, full=True)
        rows += [
            analysis.ReportRow("p0", vacuum_probability(rec.state), 0.0, "1"),
            analysis.ReportRow("recon_residual", rec.residual, 0.0, "1"),
        ]
    files = [_write_report(out, "tomography", rows, f"tomography of {args.input.name}").name]
    if not args.no_plots and "real" in samples.axes and "imaginary" in samples.axes:
        try:
            x, prof = samples.profile("real")
            files.append(plots.plot_xy(x, prof, out / "tomography_profile.png", "alpha", "Re C (axis average)").name)
        except ValueError:
            pass
    return {"files": files, "nbar": est.nbar}


def cmd_fit(args, cfg, out: Path, workers: int) -> dict:
    header, _ = records.read_csv(args.input)
    xname = args.x if args.x is not None else 0
    yname = args.y if args.y is not None else 1
    t, y = records.read_columns(args.input, [xname, yname])
    if args.model == "piecewise":
        fit = analysis.fit_piecewise_decay(t, y, form=args.form)
    elif args.model == "exponential":
        fit = analysis.fit_exponential(t, y)
    else:
        fit = analysis.fit_damped_cosine(t, y)
    files = [_write_report(out, "fit", fit.report(), f"{args.model} fit of {args.input.name}").name]
    if not args.no_plots:
        files.append(plots.plot_xy(t, y, out / "fit.png", str(header[0] if xname == 0 else xname),
                                   str(header[1] if yname == 1 else yname), fit, logy=args.model != "cosine").name)
    return {"files": files}


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "tomo": cmd_tomo, "fit": cmd_fit}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = None
    stage = "config"
    try:
        cfg = load_config(args.config) if args.config is not None else None
        if args.command == "simulate" and cfg is None:
            raise UsageError("simulate needs --config")
        if cfg is not None:
            cfg = _apply_overrides(cfg, args)
        out, workers = _resolve(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        stage = args.command
        info = COMMANDS[args.command](args, cfg, out, workers)
        manifest = {
            "status": "ok",
            "command": args.command,
            "config": cfg.to_dict() if cfg is not None else None,
            "input": str(args.input) if getattr(args, "input", None) else None,
            "seed": cfg.seed if cfg is not None else args.seed,
            "tol": cfg.tol if cfg is not None else args.tol,
            "workers": workers,
            "versions": records.versions(),
            **info,
        }
        manifest["files"] = sorted(set(manifest.get("files", [])) | {"manifest.json"})
        records.write_json(out / "manifest.json", manifest)
        return 0
    except (ConfigError, UsageError) as exc:
        return _fail(exc, stage, out, EXIT_CONFIG)
    except (OSError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        # an unreadable config is still a config problem
        return _fail(exc, stage, out, EXIT_CONFIG if stage == "config" else EXIT_RUN)


def _fail(exc, stage, out, code) -> int:
    rec = records.error_record(exc, stage)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            records.write_json(Path(out) / "error.json", rec)
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
