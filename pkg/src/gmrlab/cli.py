"""Command-line front end.

Verbs: ``train`` (single all-classes task), ``replay-run`` (sequential
tasks with generative replay), ``ewc-run`` (consolidation baseline),
``grid`` (hyper-parameter sweep), ``export-protos`` (component mosaics from
a checkpoint), ``detect-boundaries`` (fixed-epoch boundary experiment).
Every flag can also come from a JSON config file (``--config``); explicit
flags win over the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import checkpoint, harness, mosaics
from .errors import ConfigError, GmrError
from .harness import ExperimentConfig


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with config fields; flags override it")
    p.add_argument("--dataset", help="dataset name (mnist, synthetic, synthetic-32, ...)")
    p.add_argument("--data-dir", dest="data_dir", help="directory with IDX files")
    p.add_argument("--slt", help="sequential learning task name (e.g. D5-5a)")
    p.add_argument("--k", type=int, help="mixture components")
    p.add_argument("--eps", type=float, help="baseline step size (penalty weight is 1/eps)")
    p.add_argument("--loss", dest="loss_kind", choices=["mse", "ce"], help="readout loss")
    p.add_argument("--epochs", dest="base_epochs", type=int, help="epochs for the first task")
    p.add_argument("--batch", dest="batch_size", type=int, help="batch size")
    p.add_argument("--reps", dest="repetitions", type=int, help="experiment repetitions")
    p.add_argument("--seed", type=int, help="base seed; repetition r uses seed + r")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--format", nargs="+", choices=["csv", "json"], default=None,
                   help="export formats")
    p.add_argument("--limit-train", dest="limit_train", type=int,
                   help="stratified training subset size")
    p.add_argument("--split", choices=["official", "pooled"], help="train/test division")
    p.add_argument("--detect-boundaries", dest="detect_boundaries", action="store_true",
                   default=None, help="run the boundary detector alongside training")
    p.add_argument("--boundary-source", dest="boundary_source",
                   choices=["informed", "detector"],
                   help="what triggers replay at sub-task switches")
    p.add_argument("--checkpoint", dest="checkpoint_out",
                   help="write the trained model to this .npz path")


def _build_config(args: argparse.Namespace, **forced) -> ExperimentConfig:
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_cfg)
    for name in fields:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "format", None):
        values["_formats"] = args.format
    values.update(forced)
    formats = values.pop("_formats", ["csv", "json"])
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg, formats


def _finish(cfg, formats, results, summary, stem, checkpoint_out=None):
    paths = harness.export(summary, [r.log for r in results], formats, cfg.out_dir, stem=stem)
    if checkpoint_out:
        model = results[-1].model
        if cfg.model == "gmr":
            checkpoint.save_gmr(model, checkpoint_out)
        else:
            checkpoint.save_ewc(model[0], model[1], checkpoint_out)
        paths.append(checkpoint_out)
    print(json.dumps(summary, sort_keys=True, indent=2))
    for p in paths:
        print(f"wrote {p}")


def cmd_train(args) -> int:
    if args.slt not in (None, "D10"):
        raise ConfigError("train runs the single all-classes task; use replay-run for SLTs")
    cfg, formats = _build_config(args, model="gmr", slt="D10")
    results, summary = harness.run_experiment(cfg)
    _finish(cfg, formats, results, summary, "train", args.checkpoint_out)
    return 0


def cmd_replay_run(args) -> int:
    cfg, formats = _build_config(args, model="gmr")
    results, summary = harness.run_experiment(cfg)
    if cfg.detect_boundaries:
        summary["detections"] = [r.detections for r in results]
        summary["true_boundaries"] = [r.true_boundaries for r in results]
    _finish(cfg, formats, results, summary, f"replay_{cfg.slt}", args.checkpoint_out)
    return 0


def cmd_ewc_run(args) -> int:
    cfg, formats = _build_config(args, model="ewc")
    if args.base_epochs is None and "base_epochs" not in _file_keys(args):
        cfg = dataclasses.replace(cfg, base_epochs=10)
    results, summary = harness.run_experiment(cfg)
    _finish(cfg, formats, results, summary, f"ewc_{cfg.slt}", args.checkpoint_out)
    return 0


def _file_keys(args) -> set:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return set(json.load(fh))
    return set()


def cmd_grid(args) -> int:
    if args.grid_k and args.grid_eps:
        raise ConfigError("choose one of --grid-k / --grid-eps")
    if args.grid_k:
        cfg, formats = _build_config(args, model="gmr")
        grid = {"k": args.grid_k}
    elif args.grid_eps:
        cfg, formats = _build_config(args, model="ewc")
        grid = {"eps": args.grid_eps}
    else:
        raise ConfigError("grid needs --grid-k or --grid-eps")
    best_cfg, results = harness.grid_search(cfg, grid)
    report = {
        "grid": [{"value": v, **s} for v, s in results],
        "best": dataclasses.asdict(best_cfg),
    }
    harness.export(report, [], ["json"], cfg.out_dir, stem="grid")
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def cmd_export_protos(args) -> int:
    model = checkpoint.load_gmr(args.model_checkpoint)
    for kind, path in (("means", args.means), ("variances", args.variances)):
        if path:
            mosaics.save_mosaic(mosaics.prototype_mosaic(model, kind=kind), path)
            print(f"wrote {path}")
    return 0


def cmd_detect_boundaries(args) -> int:
    cfg, formats = _build_config(
        args, model="gmr", detect_boundaries=True, fixed_epochs=True
    )
    if args.base_epochs is None and "base_epochs" not in _file_keys(args):
        cfg = dataclasses.replace(cfg, base_epochs=200)
    results, summary = harness.run_experiment(cfg)
    reports = []
    for r in results:
        matched, spurious = harness.match_boundaries(
            r.true_boundaries, r.detections, tolerance=args.tolerance
        )
        reports.append(
            {
                "true_boundaries": r.true_boundaries,
                "detections": r.detections,
                "matched": {str(k): v for k, v in matched.items()},
                "unmatched_detections": spurious,
                "detected_count": len(matched),
            }
        )
    summary["boundary_reports"] = reports
    _finish(cfg, formats, results, summary, f"boundaries_{cfg.slt}", args.checkpoint_out)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gmrlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, extra in (
        ("train", cmd_train, None),
        ("replay-run", cmd_replay_run, None),
        ("ewc-run", cmd_ewc_run, None),
        ("grid", cmd_grid, "grid"),
        ("detect-boundaries", cmd_detect_boundaries, "detect"),
    ):
        p = sub.add_parser(name)
        _add_common(p)
        if extra == "grid":
            p.add_argument("--grid-k", type=int, nargs="+", help="mixture sizes to sweep")
            p.add_argument("--grid-eps", type=float, nargs="+", help="step sizes to sweep")
        if extra == "detect":
            p.add_argument("--tolerance", type=int, default=50,
                           help="iterations a detection may trail the true switch")
        p.set_defaults(fn=fn)

    p = sub.add_parser("export-protos")
    p.add_argument("model_checkpoint", help="path to a .npz model checkpoint")
    p.add_argument("--means", help="output image for component means (.png or .pgm)")
    p.add_argument("--variances", help="output image for component variances")
    p.set_defaults(fn=cmd_export_protos)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (GmrError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
