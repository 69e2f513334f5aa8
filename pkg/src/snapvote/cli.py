"""Command-line entry point: ``snapvote <subcommand> [options]``."""

import argparse
import sys
from pathlib import Path

from snapvote import config, data, experiment, metrics, storage
from snapvote.errors import ConfigError, FormatError, ShapeError
from snapvote.experiment import StageError, run_stage


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                        help="global seed; every stage seed is derived from it")
    parser.add_argument("--out-dir", default=argparse.SUPPRESS if suppress else "run",
                        help="run directory (default: ./run)")
    parser.add_argument("--config", default=default, help="INI experiment config")
    parser.add_argument("--model", type=int, default=default, help="shortcut for experiment.model")
    parser.add_argument("--set", action="append", default=argparse.SUPPRESS if suppress else [],
                        metavar="SECTION.KEY=VALUE", help="override one config value")


def build_parser():
    parser = argparse.ArgumentParser(prog="snapvote", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    add("gen-data", "write the synthetic train/unlabeled/test CSV files")
    add("pretrain", "greedy denoising-autoencoder pretraining")
    add("train", "supervised training with snapshot capture")
    add("ensemble", "compute and write every prediction of the run")
    add("eval", "accuracy, error-stats and per-layer tables")
    rep = add("report", "print the report tables and render figures")
    rep.add_argument("--compare", nargs="*", default=[], metavar="RUN_DIR",
                     help="other run directories for the comparison figure")
    add("verify", "recompute every reported accuracy from the emitted files")
    add("run", "all stages in order")
    return parser


def load(args):
    overrides = {}
    for text in args.set:
        sec, key, value = config.parse_override(text)
        overrides.setdefault(sec, {})[key] = value
    if args.model is not None:
        overrides.setdefault("experiment", {})["model"] = args.model
    return config.load_config(args.config, seed=args.seed, overrides=overrides)


def _print_tsv(title, path):
    print(f"# {title}")
    print(Path(path).read_text(), end="")


def cmd_gen_data(args, cfg, out):
    if cfg.data.source != "synthetic":
        raise ConfigError("gen-data needs a synthetic data source")
    paths = data.write_dataset_files(data.make_blobs(cfg.data.blobs), out / "data")
    for name, path in paths.items():
        print(f"{name}\t{path}")


def cmd_report(args, cfg, out):
    figures = run_stage("report", experiment.stage_report, out, cfg, out,
                        [Path(c) for c in args.compare])
    _print_tsv("accuracy", out / "reports" / "accuracy.tsv")
    rows = experiment.read_tsv(out / "reports" / "error_stats.tsv")
    print("# error_stats")
    for row in rows:
        stats = metrics.ErrorStats(*(float(row[k]) for k in ("min", "max", "mean", "std")))
        print(f"window {row['window']} {row['convention']}, {row['count']} snapshots")
        print(metrics.format_stats_table(stats))
    _print_tsv("per_layer", out / "reports" / "per_layer.tsv")
    for fig in figures:
        print(f"figure\t{fig}")


def cmd_verify(args, cfg, out):
    problems = experiment.verify(out)
    n = sum(len(experiment.read_tsv(out / "reports" / t)) for t in ("accuracy.tsv", "per_layer.tsv")
            if (out / "reports" / t).exists())
    for p in problems:
        print(f"MISMATCH\t{p}")
    print(f"checked {n} accuracies, {len(problems)} discrepancies")
    return 1 if problems else 0


def dispatch(args, cfg, out):
    cmd = args.command
    if cmd == "gen-data":
        return cmd_gen_data(args, cfg, out)
    if cmd == "verify":
        return cmd_verify(args, cfg, out)
    if cmd == "report":
        return cmd_report(args, cfg, out)
    if cmd == "run":
        experiment.run_experiment(cfg, out)
        return cmd_report(argparse.Namespace(compare=[]), cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    experiment.check_manifest(out, cfg)
    if cmd == "eval":
        rows, _, _ = run_stage("eval", experiment.stage_eval, out, cfg, out)
        _print_tsv("accuracy", out / "reports" / "accuracy.tsv")
        return None
    prep = run_stage("data", experiment.prepare_data, out, cfg)
    if cmd == "pretrain":
        if cfg.pretrain is None:
            raise ConfigError(f"model {cfg.model} has no pretraining stage")
        daes = run_stage("pretrain", experiment.stage_pretrain, out, cfg, prep, out)
        print(f"pretrained {len(daes)} layers: {[d.n_hidden for d in daes]}")
    elif cmd == "train":
        daes = experiment.load_pretrained(cfg, out)
        res = run_stage("train", experiment.stage_train, out, cfg, prep, daes, out)
        e, tr, va = res.curve[-1]
        print(f"epoch {e}\ttrain_error {data.fmt(tr)}\tvalid_error {data.fmt(va)}")
        print(f"kept {len(res.store)} snapshots")
    elif cmd == "ensemble":
        preds, _ = run_stage("ensemble", experiment.stage_ensemble, out, cfg, prep, out)
        print("methods\t" + ",".join(sorted(preds)))
    return None


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args)
        return dispatch(args, cfg, Path(args.out_dir)) or 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
