"""Command-line entry point: run or resume campaigns, inspect results.

Subcommands:
  run         execute a campaign from a JSON config
  resume      continue a campaign from its checkpoint
  plot-data   emit plot-ready CSVs (and PNG figures) from a trace
  fit-rtd     fit a tanks-in-series count to a measured outlet curve
  geometry    sample and export a coil center-line
  validate    check a config file and report field-level problems

Exit codes: 0 success, 2 invalid input or config, 3 evaluator failure limit
or degenerate data, 130 interrupted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import zlib
from pathlib import Path

from . import engine, geometry, reports, rtd
from .config import CampaignConfig, ConfigError, config_hash, default_config

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3
EXIT_INTERRUPT = 130


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=float)


class CampaignWriter:
    """Persists every record: curve files, JSONL trace, crash-safe checkpoint."""

    def __init__(self, out_dir: Path, config_raw: dict):
        self.out_dir = Path(out_dir)
        self.config_raw = config_raw
        self.hash = config_hash(config_raw)
        self.trace_path = self.out_dir / "trace.jsonl"
        self.checkpoint_path = self.out_dir / "checkpoint.json"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "rtd").mkdir(exist_ok=True)

    def reset_files(self, records=()):
        """Rewrite the trace from known records (fresh start or resume)."""
        with open(self.trace_path, "w") as fh:
            for record in records:
                fh.write(_dump(record.to_dict()) + "\n")

    def on_record(self, record: engine.Evaluation, state: engine.CampaignState):
        if record.curve is not None:
            rel = f"rtd/eval_{record.index:05d}.csv"
            path = record.curve.to_csv(self.out_dir / rel)
            record.meta["rtd_file"] = rel
            record.meta["rtd_crc32"] = f"{zlib.crc32(path.read_bytes()):08x}"
        with open(self.trace_path, "a") as fh:
            fh.write(_dump(record.to_dict()) + "\n")
        self.write_checkpoint(state)

    def write_checkpoint(self, state: engine.CampaignState, result=None):
        payload = {
            "config": self.config_raw,
            "config_hash": self.hash,
            "records": [r.to_dict() for r in state.dataset.records],
            "budget": {"total": state.budget.total, "spent": state.budget.spent},
            "seed_cursor": len(state.dataset.records),
            "finished": result is not None,
            "result": result.to_dict() if result is not None else None,
        }
        tmp = self.checkpoint_path.with_suffix(".json.tmp")
        tmp.write_text(_dump(payload))
        tmp.replace(self.checkpoint_path)

    def finalize(self, state: engine.CampaignState, result: engine.CampaignResult):
        self.write_checkpoint(state, result)
        (self.out_dir / "result.json").write_text(_dump(result.to_dict()) + "\n")


def _resolve_output_dir(config: CampaignConfig) -> Path:
    root = os.environ.get("MFREACTOR_OUTPUT_ROOT")
    out = config.output_dir
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _print_result(result: engine.CampaignResult):
    print(f"termination: {result.termination_reason}")
    if result.x_star is not None:
        print(f"x*: {[round(v, 6) for v in result.x_star]}")
        print(f"y*: {result.y_star:.6g}")
        print(f"z*: {list(result.z_star)}")
    print(f"budget: spent {result.budget.spent:.6g} of {result.budget.total:.6g}")
    print(f"evaluations: {len(result.trace.records)}")


def _run_to_exit(config: CampaignConfig, writer: CampaignWriter, state=None) -> int:
    evaluator = config.build_evaluator()
    engine_cfg = config.engine_config()
    if state is None:
        state = engine.CampaignState(
            engine_cfg, evaluator,
            engine.Dataset(engine_cfg.x_bounds.shape[0], engine_cfg.z_bounds.shape[0]),
            engine.BudgetState(engine_cfg.budget_total),
            on_record=writer.on_record,
        )
    try:
        result = engine.run(engine_cfg, evaluator, state=state)
    except KeyboardInterrupt:
        print("interrupted; checkpoint retained", file=sys.stderr)
        return EXIT_INTERRUPT
    writer.finalize(state, result)
    _print_result(result)
    return EXIT_OK if result.termination_reason == engine.TERMINATION_STOPPING_RULE \
        else EXIT_FAILURE


def cmd_run(args) -> int:
    try:
        config = CampaignConfig.from_file(args.config)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _resolve_output_dir(config)
    writer = CampaignWriter(out_dir, config.raw)
    (out_dir / "config.json").write_text(_dump(config.raw) + "\n")
    writer.reset_files()
    return _run_to_exit(config, writer)


def cmd_resume(args) -> int:
    path = Path(args.checkpoint)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        print(f"corrupted checkpoint {path}: line {exc.lineno}, column {exc.colno}: "
              f"{exc.msg}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read checkpoint: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for key in ("config", "config_hash", "records", "budget"):
        if key not in payload:
            print(f"corrupted checkpoint {path}: missing {key!r}", file=sys.stderr)
            return EXIT_CONFIG
    if config_hash(payload["config"]) != payload["config_hash"]:
        print("checkpoint config hash mismatch; refusing to resume", file=sys.stderr)
        return EXIT_CONFIG
    if payload.get("finished"):
        print("campaign already finished; nothing to resume")
        return EXIT_OK

    try:
        config = CampaignConfig.from_dict(payload["config"])
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG

    engine_cfg = config.engine_config()
    dataset = engine.Dataset(engine_cfg.x_bounds.shape[0], engine_cfg.z_bounds.shape[0])
    for rec in payload["records"]:
        dataset.append(engine.Evaluation.from_dict(rec))
    failures = 0
    for rec in reversed(dataset.records):
        if rec.ok:
            break
        failures += 1
    budget = engine.BudgetState(payload["budget"]["total"], payload["budget"]["spent"])

    writer = CampaignWriter(path.parent, config.raw)
    writer.reset_files(dataset.records)
    state = engine.CampaignState(engine_cfg, config.build_evaluator(), dataset, budget,
                                 consecutive_failures=failures,
                                 on_record=writer.on_record)
    return _run_to_exit(config, writer, state=state)


def cmd_plot_data(args) -> int:
    keys = list(reports.FIGURE_KEYS) if args.figure == "all" else [args.figure]
    out_dir = Path(args.out) if args.out else Path(args.trace).parent / "reports"
    try:
        for key in keys:
            for created in reports.plot_data(args.trace, key, out_dir,
                                             with_figures=not args.no_figures):
                print(created)
    except (ValueError, OSError) as exc:
        print(f"plot-data error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_fit_rtd(args) -> int:
    try:
        curve = rtd.RtdCurve.from_csv(args.csv)
        dim = rtd.to_dimensionless(curve)
        fit = rtd.fit_tanks_in_series_detail(dim, method=args.method)
    except (rtd.DegenerateCurveError, rtd.RtdFitError) as exc:
        print(f"fit-rtd error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, OSError) as exc:
        print(f"fit-rtd error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(f"N*: {fit.n:.6g}")
    print(f"peak discrepancy: {fit.peak_discrepancy:.6g}")
    if fit.at_lower_bound:
        print("warning: fit pinned at the lower search bound (N -> 1)")

    src = Path(args.csv)
    out = Path(args.out) if args.out else src.parent / (src.stem + "_fit.csv")
    e_fit = rtd.tanks_in_series_curve(dim.theta, fit.n)
    reports.write_csv(out, ["theta", "e_data", "e_fit"],
                      [[float(t), float(a), float(b)]
                       for t, a, b in zip(dim.theta, dim.e_theta, e_fit)])
    print(out)
    if not args.no_figures:
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(7, 4.5))
        ax.plot(dim.theta, dim.e_theta, label="data", lw=1.2)
        ax.plot(dim.theta, e_fit, label=f"tanks-in-series fit, N={fit.n:.3g}", ls="--")
        ax.set_xlabel(r"$\theta$")
        ax.set_ylabel(r"$E(\theta)$")
        ax.legend()
        fig.tight_layout()
        fig_path = out.with_suffix(".png")
        fig.savefig(fig_path, dpi=130)
        plt.close(fig)
        print(fig_path)
    return EXIT_OK


def cmd_geometry(args) -> int:
    try:
        params = geometry.CoilParams(
            pitch_mm=args.pitch, coil_radius_mm=args.coil_radius,
            inversion=args.inversion, tube_length_mm=args.tube_length,
            tube_radius_mm=args.tube_radius,
        )
        path = geometry.coil_path(params, samples_per_mm=args.samples_per_mm)
    except (ValueError, geometry.GeometryError) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else Path(f"coil.{args.format}")
    geometry.export_path(path, args.format, out)
    print(out)
    print(f"arc length: {path.total_length:.4f} mm over {path.points.shape[0]} samples")
    if not args.no_figures:
        import matplotlib.pyplot as plt
        fig = plt.figure(figsize=(6, 6))
        ax = fig.add_subplot(projection="3d")
        p = path.points
        ax.plot(p[:, 0], p[:, 1], p[:, 2], lw=1.0)
        ax.set_xlabel("x (mm)")
        ax.set_ylabel("y (mm)")
        ax.set_zlabel("z (mm)")
        fig_path = out.with_suffix(".png")
        fig.savefig(fig_path, dpi=130)
        plt.close(fig)
        print(fig_path)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        CampaignConfig.from_file(args.config)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    print("config OK")
    return EXIT_OK


def cmd_init(args) -> int:
    text = _dump(default_config())
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(args.out)
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfreactor",
        description="Multi-fidelity Bayesian optimization of simulated tube reactors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a campaign from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="resume a campaign from its checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("plot-data", help="emit plot CSVs and figures from a trace")
    p.add_argument("trace")
    p.add_argument("--figure", default="all",
                   choices=list(reports.FIGURE_KEYS) + ["all"])
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="CSVs only")
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("fit-rtd", help="fit tanks-in-series to a time/concentration CSV")
    p.add_argument("csv")
    p.add_argument("--method", default="peak", choices=["peak", "least-squares"])
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_fit_rtd)

    p = sub.add_parser("geometry", help="sample and export a coil center-line")
    p.add_argument("--pitch", type=float, required=True, help="coil pitch, mm")
    p.add_argument("--coil-radius", type=float, required=True, help="coil radius, mm")
    p.add_argument("--inversion", type=float, default=0.0)
    p.add_argument("--tube-length", type=float, default=75.0)
    p.add_argument("--tube-radius", type=float, default=2.5)
    p.add_argument("--samples-per-mm", type=float, default=8.0)
    p.add_argument("--format", default="csv", choices=["csv", "json", "obj"])
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("validate", help="validate a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init", help="print or write the default config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_init)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MFREACTOR_LOGLEVEL", "WARNING"))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
