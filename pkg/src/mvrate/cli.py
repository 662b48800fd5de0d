"""Command-line surface binding all modules.

One binary with subcommands for model fitting, threshold optimization,
rate-accuracy sweeps, routing, empirical evaluation, flow scoring and
volume export. Designed for batch experiment runs: identical inputs and
flags produce byte-identical result files (run metadata such as
timestamps goes to a separate ``*.run.json`` sidecar), diagnostics go to
stderr, and the exit code is 0 exactly when no error occurred.

Defaults can come from a config file of ``key = value`` lines (``#``
comments allowed; values parsed as JSON scalars where possible, e.g.
``budget_step = 0.5``); command-line flags override the config. The
default output directory honors the ``MVRATE_OUT_DIR`` environment
variable.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .errors import EmptyDataset, InfeasibleBudget, MvrateError
from .flow_metrics import aepe_sequence
from .harness import (
    bin_overlap,
    evaluate_policy,
    format_empirical_report,
    format_rate_table,
    load_manifest,
    rate_table,
)
from .mv_field import (
    VolumeLayout,
    assemble_volume,
    parse_mv_sidecar,
    read_flo,
    ten_crop,
)
from .rate_model import (
    RateModel,
    SourceModel,
    fit_rates,
    fit_source,
    kl_divergence_empirical,
)
from .selector import OptimizationProblem, SelectorPolicy, classify_route, optimize, sweep

ENV_OUT_DIR = "MVRATE_OUT_DIR"

_CONFIG_KEYS = {
    "out_dir", "format", "jobs", "strict",
    "manifest", "observations", "source_model", "rate_model",
    "bins", "bin_width", "out", "csv_out",
    "acc_3d", "acc_2d", "acc_sp", "i_sp", "budget",
    "budgets", "budget_start", "budget_stop", "budget_step",
    "r_low", "r_high",
    "sidecar", "flow_dir", "layout", "crop_size", "t_start",
    "temporal_extent", "origin", "out_prefix",
}


def load_config(path) -> dict:
    """Parse a ``key = value`` config file into a defaults dict."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MvrateError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _CONFIG_KEYS:
                raise MvrateError(f"{path}:{lineno}: unknown config key {key!r}")
            value = value.strip()
            try:
                values[key] = json.loads(value)
            except json.JSONDecodeError:
                values[key] = value
    return values


def _require_paths(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise MvrateError(f"path does not exist: {p}")


def _out_path(args, name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_run_metadata(path: Path, args) -> None:
    meta = {
        "argv": sys.argv[1:],
        "command": args.command,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    path.with_suffix(path.suffix + ".run.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_source_model(path) -> SourceModel:
    return SourceModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _load_rate_model(path) -> RateModel:
    return RateModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _problem_from_args(args, budget: float) -> OptimizationProblem:
    return OptimizationProblem(
        source=_load_source_model(args.source_model),
        rates=_load_rate_model(args.rate_model),
        i_sp=args.i_sp,
        acc_3d=args.acc_3d, acc_2d=args.acc_2d, acc_sp=args.acc_sp,
        r_available=budget,
    )


# --- subcommands ---------------------------------------------------------


def cmd_fit_source(args) -> int:
    _require_paths(args.manifest)
    records = load_manifest(args.manifest)
    if not records:
        raise EmptyDataset(f"manifest {args.manifest} has no records")
    samples = [rec.r_motion for rec in records]
    model = fit_source(samples)
    payload = model.to_dict()
    payload["n_samples"] = len(samples)
    payload["manifest"] = str(args.manifest)
    if len(samples) >= args.bins:
        payload["kl_divergence"] = kl_divergence_empirical(samples, model,
                                                           bins=args.bins)
        payload["kl_bins"] = args.bins
    out = _out_path(args, args.out)
    _write_json(out, payload)
    _write_run_metadata(out, args)
    return 0


def cmd_fit_rates(args) -> int:
    _require_paths(args.observations)
    obs_3d, obs_2d = [], []
    with open(args.observations, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                r = float(d["r_motion"])
                if "r_3d" in d:
                    obs_3d.append((r, float(d["r_3d"])))
                if "r_2d" in d:
                    obs_2d.append((r, float(d["r_2d"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MvrateError(
                    f"{args.observations}:{lineno}: bad observation line: {exc}"
                ) from exc
    model = fit_rates(obs_3d, obs_2d)
    out = _out_path(args, args.out)
    _write_json(out, model.to_dict())
    _write_run_metadata(out, args)
    return 0


def cmd_optimize(args) -> int:
    _require_paths(args.source_model, args.rate_model)
    problem = _problem_from_args(args, args.budget)
    result = optimize(problem, strict=args.strict)
    out = _out_path(args, args.out)
    _write_json(out, {"problem": problem.to_dict(), "result": result.to_dict()})
    _write_run_metadata(out, args)
    if not result.feasible:
        print(f"error: InfeasibleBudget: budget {args.budget} kbps is below "
              f"the all-spatial cost {args.i_sp} kbps; all-spatial fallback "
              f"recorded in {out}", file=sys.stderr)
        return 2
    return 0


def _budget_list(args) -> list[float]:
    if args.budgets:
        return [float(tok) for tok in str(args.budgets).split(",") if tok.strip()]
    if args.budget_start is None or args.budget_stop is None:
        raise MvrateError("sweep needs --budgets or --budget-start/stop[/step]")
    budgets = []
    b = args.budget_start
    while b <= args.budget_stop + 1e-12:
        budgets.append(round(b, 9))
        b += args.budget_step
    return budgets


def cmd_sweep(args) -> int:
    _require_paths(args.source_model, args.rate_model)
    budgets = _budget_list(args)
    problem = _problem_from_args(args, budget=max(budgets))
    points = sweep(problem, budgets, jobs=args.jobs)
    rows = [(p.budget, p.result.policy.r_low, p.result.policy.r_high,
             p.result.predicted_accuracy, p.result.predicted_sent_rate,
             p.result.feasible)
            for p in points]
    out = _out_path(args, args.out)
    _write_csv(out, ("budget_kbps", "r_low", "r_high", "a_mcnn", "r_sent",
                     "feasible"), rows)
    _write_run_metadata(out, args)
    return 0


def cmd_select(args) -> int:
    _require_paths(args.manifest)
    records = load_manifest(args.manifest)
    if not records:
        raise EmptyDataset(f"manifest {args.manifest} has no records")
    policy = SelectorPolicy(r_low=args.r_low, r_high=args.r_high)
    rows = [(rec.id, rec.r_motion, classify_route(policy, rec.r_motion).value)
            for rec in records]
    out = _out_path(args, args.out)
    _write_csv(out, ("id", "r_motion", "route"), rows)
    _write_run_metadata(out, args)
    return 0


def cmd_evaluate(args) -> int:
    _require_paths(args.manifest, args.rate_model,
                   args.source_model if args.source_model else None)
    records = load_manifest(args.manifest)
    if not records:
        raise EmptyDataset(f"manifest {args.manifest} has no records")
    policy = SelectorPolicy(r_low=args.r_low, r_high=args.r_high,
                            acc_3d=args.acc_3d, acc_2d=args.acc_2d,
                            acc_sp=args.acc_sp)
    rates = _load_rate_model(args.rate_model)
    source = _load_source_model(args.source_model) if args.source_model else None
    report = evaluate_policy(records, policy, rates, source=source)
    out = _out_path(args, args.out)
    _write_json(out, report.to_dict())
    _write_run_metadata(out, args)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(format_empirical_report(report))
    return 0


def cmd_bin_overlap(args) -> int:
    _require_paths(args.manifest)
    records = load_manifest(args.manifest)
    if not records:
        raise EmptyDataset(f"manifest {args.manifest} has no records")
    bins = bin_overlap(records, args.bin_width)
    rows = [(b.bin_low, b.bin_high, b.count_correct_3d, b.count_correct_2d)
            for b in bins]
    out = _out_path(args, args.out)
    _write_csv(out, ("bin_low", "bin_high", "correct_3d", "correct_2d"), rows)
    _write_run_metadata(out, args)
    return 0


def cmd_rate_table(args) -> int:
    _require_paths(args.manifest)
    records = load_manifest(args.manifest)
    if not records:
        raise EmptyDataset(f"manifest {args.manifest} has no records")
    rows = rate_table(records)
    csv_rows = [(r.codec, r.qp, r.mean_r_orig, r.mean_r_cropped, r.mean_r_motion,
                 r.pct_motion_orig, r.pct_motion_cropped) for r in rows]
    out = _out_path(args, args.out)
    _write_csv(out, ("codec", "qp", "mean_r_orig", "mean_r_cropped",
                     "mean_r_motion", "pct_motion_orig", "pct_motion_cropped"),
               csv_rows)
    _write_run_metadata(out, args)
    if args.format != "json":
        print(format_rate_table(rows))
    return 0


def cmd_aepe(args) -> int:
    _require_paths(args.sidecar, args.flow_dir)
    field = parse_mv_sidecar(Path(args.sidecar).read_bytes())
    flo_paths = sorted(Path(args.flow_dir).glob("*.flo"))
    if not flo_paths:
        raise MvrateError(f"no .flo files in {args.flow_dir}")
    gt_frames = [read_flo(p) for p in flo_paths]
    report = aepe_sequence(field, gt_frames)
    out = _out_path(args, args.out)
    _write_json(out, report.to_dict())
    csv_out = _out_path(args, args.csv_out)
    _write_csv(csv_out, ("frame_index", "aepe"),
               list(enumerate(report.per_frame_aepe)))
    _write_run_metadata(out, args)
    print(f"mean aEPE over {report.frames_evaluated} frames: "
          f"{report.mean_aepe:.6f}")
    return 0


def cmd_volumes(args) -> int:
    _require_paths(args.sidecar)
    field = parse_mv_sidecar(Path(args.sidecar).read_bytes())
    layout = VolumeLayout(args.layout)
    if args.origin is not None:
        x, y = (int(tok) for tok in args.origin.split(","))
        n = args.crop_size
        crops = [(x, y, False)]
        if n is None:
            from .mv_field import DEFAULT_CROP_SIZE
            n = DEFAULT_CROP_SIZE[layout]
    else:
        descriptors = ten_crop(field, layout, args.crop_size)
        n = descriptors[0].size
        crops = [(d.x, d.y, d.flipped) for d in descriptors]
    entries = []
    temporal_extent = None
    for idx, (x, y, flipped) in enumerate(crops):
        volume = assemble_volume(field, layout, crop_origin=(x, y), n=n,
                                 t_start=args.t_start,
                                 temporal_extent=args.temporal_extent,
                                 flip=flipped)
        temporal_extent = volume.temporal_extent
        name = f"{args.out_prefix}_{idx:02d}.f32"
        path = _out_path(args, name)
        volume.samples.astype("<f4").tofile(path)
        entries.append({
            "file": name,
            "origin": [x, y],
            "flipped": flipped,
            "shape": list(volume.samples.shape),
        })
    descriptor = {
        "layout": layout.value,
        "dtype": "float32",
        "order": "C",
        "spatial_size": n,
        "temporal_extent": temporal_extent,
        "volumes": entries,
    }
    out = _out_path(args, f"{args.out_prefix}.json")
    _write_json(out, descriptor)
    _write_run_metadata(out, args)
    return 0


# --- parser -----------------------------------------------------------------


def _add_common(sub, *, manifest=False, models=False, accuracies=False,
                thresholds=False):
    if manifest:
        sub.add_argument("--manifest", required=True, help="JSON-lines manifest")
    if models:
        sub.add_argument("--source-model", required=True,
                         help="fitted source model JSON")
        sub.add_argument("--rate-model", required=True,
                         help="fitted rate model JSON")
    if accuracies:
        sub.add_argument("--acc-3d", type=float, required=True,
                         help="accuracy of the 3D temporal classifier")
        sub.add_argument("--acc-2d", type=float, required=True,
                         help="accuracy of the 2D temporal classifier")
        sub.add_argument("--acc-sp", type=float, required=True,
                         help="accuracy of the spatial classifier")
    if thresholds:
        sub.add_argument("--r-low", type=float, required=True,
                         help="3D/2D routing threshold (kbps)")
        sub.add_argument("--r-high", type=float, required=True,
                         help="2D/spatial routing threshold (kbps)")


def build_parser(config: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvrate",
        description="Rate-accuracy toolkit for compressed-domain video "
                    "classification")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--out-dir",
                        default=os.environ.get(ENV_OUT_DIR, "."),
                        help="output directory (env MVRATE_OUT_DIR)")
    parser.add_argument("--format", choices=("text", "json"), default="text",
                        help="stdout rendering for report commands")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for sweeps")
    parser.add_argument("--strict", action="store_true",
                        help="raise instead of falling back on infeasible "
                             "budgets or unordered accuracies")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("fit-source", help="fit the Gamma source model")
    _add_common(p, manifest=True)
    p.add_argument("--bins", type=int, default=50,
                   help="histogram bins for the KL diagnostic")
    p.add_argument("--out", default="source_model.json")
    p.set_defaults(func=cmd_fit_source)

    p = commands.add_parser("fit-rates", help="fit the linear rate models")
    p.add_argument("--observations", required=True,
                   help="JSON lines with r_motion and r_3d/r_2d")
    p.add_argument("--out", default="rate_model.json")
    p.set_defaults(func=cmd_fit_rates)

    p = commands.add_parser("optimize",
                            help="solve the budget-constrained threshold choice")
    _add_common(p, models=True, accuracies=True)
    p.add_argument("--i-sp", type=float, required=True,
                   help="average IDR-frame rate (kbps)")
    p.add_argument("--budget", type=float, required=True,
                   help="available transmission rate (kbps)")
    p.add_argument("--out", default="optimize_result.json")
    p.set_defaults(func=cmd_optimize)

    p = commands.add_parser("sweep", help="rate-accuracy curve over budgets")
    _add_common(p, models=True, accuracies=True)
    p.add_argument("--i-sp", type=float, required=True)
    p.add_argument("--budgets", default=None,
                   help="comma-separated budgets (kbps)")
    p.add_argument("--budget-start", type=float, default=None)
    p.add_argument("--budget-stop", type=float, default=None)
    p.add_argument("--budget-step", type=float, default=1.0)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    p = commands.add_parser("select", help="route manifest videos by threshold")
    _add_common(p, manifest=True, thresholds=True)
    p.add_argument("--out", default="routing.csv")
    p.set_defaults(func=cmd_select)

    p = commands.add_parser("evaluate",
                            help="score a policy against correctness bits")
    _add_common(p, manifest=True, thresholds=True, accuracies=True)
    p.add_argument("--rate-model", required=True)
    p.add_argument("--source-model", default=None,
                   help="optional source model; fitted from the manifest "
                        "when omitted")
    p.add_argument("--out", default="evaluation.json")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("bin-overlap",
                            help="bin temporal-classifier correctness by rate")
    _add_common(p, manifest=True)
    p.add_argument("--bin-width", type=float, required=True)
    p.add_argument("--out", default="bin_overlap.csv")
    p.set_defaults(func=cmd_bin_overlap)

    p = commands.add_parser("rate-table", help="per-QP rate aggregates")
    _add_common(p, manifest=True)
    p.add_argument("--out", default="rate_table.csv")
    p.set_defaults(func=cmd_rate_table)

    p = commands.add_parser("aepe",
                            help="average end-point error vs dense flow")
    p.add_argument("--sidecar", required=True, help="MVSC sidecar file")
    p.add_argument("--flow-dir", required=True,
                   help="directory of .flo ground-truth frames, sorted by name")
    p.add_argument("--out", default="aepe_report.json")
    p.add_argument("--csv-out", default="aepe_per_frame.csv")
    p.set_defaults(func=cmd_aepe)

    p = commands.add_parser("volumes", help="export classifier input volumes")
    p.add_argument("--sidecar", required=True)
    p.add_argument("--layout", choices=[v.value for v in VolumeLayout],
                   required=True)
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--t-start", type=int, default=0)
    p.add_argument("--temporal-extent", type=int, default=None)
    p.add_argument("--origin", default=None,
                   help="single crop origin 'x,y' instead of the 10-crop set")
    p.add_argument("--out-prefix", default="volume")
    p.set_defaults(func=cmd_volumes)

    if config:
        parser.set_defaults(**config)
        for action in commands.choices.values():
            action.set_defaults(**{k: v for k, v in config.items()})
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config = {}
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    try:
        if known.config:
            _require_paths(known.config)
            config = load_config(known.config)
        parser = build_parser(config)
        args = parser.parse_args(argv)
        return args.func(args)
    except MvrateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, InfeasibleBudget) else 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
