"""Command-line entry point.

    degradenet <subcommand> [--config PATH] [--seed N] [--out DIR]
               [--cells LIST] [--k-range A:B] [--projection {pca,tsne}]

``grid`` runs the method x multi x features comparison. Every other
subcommand runs the pipeline up to and including its own stage and leaves the
stage outputs, ``report.json`` and ``manifest.json`` in the output directory.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training or
numerical divergence, 1 anything else.
"""
import argparse
import json
import os
import sys

from .errors import (ConfigError, DegenerateDataError, DegradeNetError, NumericalFailureError,
                     SchemaError, SpecError, TrainingDivergedError, ValidationError)
from .experiment import PROJECTIONS, ExperimentConfig, run_grid, run_pipeline

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

PIPELINE_COMMANDS = {
    "generate": "generate",
    "train": "train",
    "embed": "embed",
    "cluster": "cluster",
    "project": "project",
    "profile": "profile",
    "pipeline": "profile",
}
HELP = {
    "generate": "draw (or load) the cohort and split it",
    "train": "train the pipeline's LSTM cell",
    "grid": "run the method x multi x features grid",
    "embed": "extract final hidden states as embeddings",
    "cluster": "choose K by silhouette and cluster the embeddings",
    "project": "2-D projection of the embeddings",
    "profile": "utilization occurrence ratios by cluster and score bin",
    "pipeline": "every stage end to end",
}


def parse_k_range(text):
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B with integers, got {text!r}") from None
    return a, b


def parse_cells(text):
    return tuple(t.strip().upper() for t in text.split(",") if t.strip())


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config")
    common.add_argument("--seed", type=int, metavar="N", help="master seed (overrides config)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    common.add_argument("--cells", type=parse_cells, metavar="LIST",
                        help="comma-separated grid cells such as R00,L11 (method R/L, multi 0/1, "
                             "features 0/1); for pipeline stages the first names the model cell")
    common.add_argument("--k-range", type=parse_k_range, metavar="A:B", help="candidate K range")
    common.add_argument("--projection", choices=PROJECTIONS)

    parser = argparse.ArgumentParser(prog="degradenet", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in ("generate", "train", "grid", "embed", "cluster", "project", "profile", "pipeline"):
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def resolve_config(args):
    cfg = ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    doc = cfg.to_dict()
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    if args.k_range is not None:
        doc["k_range"] = list(args.k_range)
    if args.projection is not None:
        doc["projection"] = args.projection
    if args.cells:
        if args.command == "grid":
            doc["cells"] = list(args.cells)
        else:
            doc["pipeline_cell"] = args.cells[0]
    return ExperimentConfig.from_dict(doc)


def exit_code(exc):
    if isinstance(exc, (ConfigError, SpecError)):
        return EXIT_CONFIG
    if isinstance(exc, (SchemaError, ValidationError, DegenerateDataError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (TrainingDivergedError, NumericalFailureError)):
        return EXIT_DIVERGED
    return EXIT_OTHER


def _fmt(v):
    return "failed" if v is None else f"{v:.4f}"


def cmd_grid(cfg):
    os.makedirs(cfg.out, exist_ok=True)

    def show(row):
        print(f"{row['cell']}  {row['method']:<10} multi={int(row['multi'])} features={int(row['features'])}"
              f"  adl {_fmt(row['mse_adl'])}  cog {_fmt(row['mse_cog'])}  ({row['train_seconds']:.1f}s)",
              flush=True)

    report = run_grid(cfg, progress=show)
    with open(os.path.join(cfg.out, "metrics.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    with open(os.path.join(cfg.out, "metrics.csv"), "w", newline="") as fh:
        fh.write(report.to_csv_text())
    print(f"best ADL cell: {report.best_cell('adl')}; wrote {cfg.out}/metrics.json")
    failed = [r for r in report.rows if r["status"] != "ok"]
    return EXIT_DIVERGED if failed and len(failed) == len(report.rows) else EXIT_OK


def cmd_pipeline(cfg, stage):
    result = run_pipeline(cfg, stop_after=stage)
    for entry in result.manifest["stages"]:
        print(f"{entry['stage']:<10} {entry['file']:<20} {entry['sha256'][:16]}")
    rep = result.report
    if "model" in rep:
        print(f"held-out MSE  adl {rep['model']['mse_adl']:.4f}  cog {rep['model']['mse_cog']:.4f}")
    if "clustering" in rep:
        c = rep["clustering"]
        ari = f", ARI vs planted {c['ari_vs_planted']:.3f}" if "ari_vs_planted" in c else ""
        print(f"chosen K = {c['chosen_k']}{ari}")
    print(f"wrote {cfg.out}/manifest.json")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "grid":
            return cmd_grid(cfg)
        return cmd_pipeline(cfg, PIPELINE_COMMANDS[args.command])
    except (DegradeNetError, OSError) as exc:
        print(f"degradenet {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except json.JSONDecodeError as exc:
        print(f"degradenet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
