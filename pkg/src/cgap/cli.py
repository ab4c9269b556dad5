"""Command-line surface: train, eval, cost, heatmap."""

import argparse
import json
import sys

from . import config as cfg
from .checkpoint import load_checkpoint, save_checkpoint
from .costs import HwConfig, compare, traffic_latency_energy
from .exports import export_heatmap, export_metrics
from .training import TrainState, evaluate, train


def _parser():
    p = argparse.ArgumentParser(prog="cgap", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a growth/pruning training schedule")
    t.add_argument("--config", required=True, help="TOML experiment config")
    t.add_argument("--out", help="checkpoint output path")
    t.add_argument("--metrics", help="per-epoch metrics CSV path")
    t.add_argument("--data", help="train dataset spec, overrides [data].train")
    t.add_argument("--seed", type=int, help="override every seed in the config")

    e = sub.add_parser("eval", help="report accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="e.g. mnist:test or synth:seed=1")
    e.add_argument("--config", help="TOML config (for the [data] section)")

    c = sub.add_parser("cost", help="analytical inference cost of a checkpoint")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--hw", help="TOML file with a [hardware] section")
    c.add_argument("--compare", help="baseline checkpoint to compare against")
    c.add_argument("--json", action="store_true", dest="as_json")

    h = sub.add_parser("heatmap", help="export a layer's |weight| grid as CSV")
    h.add_argument("--ckpt", required=True)
    h.add_argument("--layer", required=True, type=int)
    h.add_argument("--out", required=True)
    return p


def _cmd_train(args):
    doc = cfg.load_toml(args.config)
    net = cfg.model_from(doc, seed=args.seed)
    train_config = cfg.train_config_from(doc, seed=args.seed)
    data_section = doc.get("data", {})
    train_spec = args.data or data_section.get("train", "synth:seed=0")
    train_data = cfg.dataset_from_spec(train_spec, doc)
    test_data = None
    if data_section.get("test"):
        test_data = cfg.dataset_from_spec(data_section["test"], doc)
    state = TrainState.fresh(net, train_config)
    net, metrics = train(net, train_data, train_config, test_data=test_data, state=state)
    if args.metrics:
        export_metrics(metrics, args.metrics)
    if args.out:
        save_checkpoint(net, state, args.out)
    last = metrics[-1] if metrics else None
    if last is not None:
        print(
            f"trained {last.epoch} epochs: loss {last.train_loss:.4f}, "
            f"train acc {last.train_accuracy:.4f}, params {last.active_params}"
        )
    return 0


def _cmd_eval(args):
    net, _ = load_checkpoint(args.ckpt)
    doc = cfg.load_toml(args.config) if args.config else None
    dataset = cfg.dataset_from_spec(args.data, doc)
    print(f"{evaluate(net, dataset):.4f}")
    return 0


def _cmd_cost(args):
    net, _ = load_checkpoint(args.ckpt)
    hw = cfg.hw_config_from(cfg.load_toml(args.hw)) if args.hw else HwConfig()
    if args.compare:
        base, _ = load_checkpoint(args.compare)
        result = compare([("baseline", base), ("model", net)], hw)
        print(result.as_json() if args.as_json else result.format_table())
    else:
        report = traffic_latency_energy(net, hw)
        if args.as_json:
            print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
        else:
            t = report.total
            print(
                f"macs {t.macs}  flops {t.flops}  params {t.params}  "
                f"dram_bytes {t.dram_bytes:.0f}  energy_pj {t.energy_pj:.3e}  "
                f"latency_s {t.latency_s:.3e}"
            )
    return 0


def cli_dispatch(argv):
    """Run one CLI invocation; returns the process exit code."""
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "cost":
            return _cmd_cost(args)
        if args.command == "heatmap":
            net, _ = load_checkpoint(args.ckpt)
            export_heatmap(net, args.layer, args.out)
            return 0
        return 2
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"cgap: error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
