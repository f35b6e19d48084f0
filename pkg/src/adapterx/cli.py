"""Command line entry point: ``adapterx <subcommand> --config FILE``."""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .data import SyntheticTask, make_task
from .errors import AdapterXError
from .gradcheck import TOLERANCE, gradcheck_model, perturb
from .ledger import count_params
from .model import build_model
from .smoa import routing_stats
from .train import accuracy, train


def _config(args):
    return load_config(args.config) if args.config else ExperimentConfig().validate()


def _model(cfg, args):
    model = build_model(cfg.model)
    if getattr(args, "checkpoint", None):
        load_checkpoint(model, args.checkpoint)
    return model


def cmd_train(args):
    cfg = _config(args)
    out = Path(args.out or f"runs/{cfg.hash()}")
    report, _ = train(cfg, out_dir=out)
    last = report.epochs[-1]
    print(f"mode={report.peft_mode} trainable={report.trainable_params} headline={report.headline_params}")
    print(f"final val_acc={last['val_acc']:.4f} test_acc={report.test_acc:.4f} wall={report.wall_time:.1f}s")
    print(f"wrote {out / 'report.json'} and {out / 'checkpoint.npz'}")
    return 0


def cmd_eval(args):
    cfg = _config(args)
    model = _model(cfg, args)
    data = make_task(SyntheticTask.from_config(cfg))
    acc = accuracy(model, data.split(args.split), cfg.train.eval_batch_size)
    print(json.dumps({"split": args.split, "accuracy": acc, "config_hash": cfg.hash()}))
    return 0


def cmd_params(args):
    cfg = _config(args)
    ledger = count_params(build_model(cfg.model, meta=True))
    print(ledger.format_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        print(f"wrote {ledger.write_csv(out / 'ledger.csv')}")
    return 0


def _collect_records(model, x, batch_size):
    records = []
    with T.no_grad():
        for lo in range(0, len(x), batch_size):
            model.forward(x[lo : lo + batch_size], records)
    return records


def cmd_route_stats(args):
    cfg = _config(args)
    if not cfg.model.uses_moa:
        raise AdapterXError(f"peft_mode {cfg.model.peft_mode!r} has no router")
    model = _model(cfg, args)
    data = make_task(SyntheticTask.from_config(cfg))
    records = _collect_records(model, data.split(args.split).x, cfg.train.eval_batch_size)
    stats = routing_stats(records, base_len=cfg.model.seq_len, path_seqs=args.path_samples)
    paths = stats.write(args.out or ".")
    for blk, row in enumerate(stats.load_matrix()):
        print(f"block {blk}: " + " ".join(f"{f:.3f}" for f in row))
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_gradcheck(args):
    cfg = _config(args)
    model = build_model(cfg.model)
    perturb(model, seed=args.seed)
    data = make_task(SyntheticTask.from_config(cfg))
    x, y = data.train.x[: args.samples], data.train.y[: args.samples]
    report = gradcheck_model(model, x, y)
    worst = max(report.values()) if report else 0.0
    for name, err in report.items():
        flag = "ok" if err < args.tol else "FAIL"
        print(f"{flag:4} {err:.3e}  {name}")
    print(f"max relative error {worst:.3e} over {len(report)} tensors (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def cmd_export_features(args):
    cfg = _config(args)
    model = _model(cfg, args)
    data = make_task(SyntheticTask.from_config(cfg))
    split = data.split(args.split)
    feats = []
    with T.no_grad():
        for lo in range(0, len(split), cfg.train.eval_batch_size):
            _, f = model.forward(split.x[lo : lo + cfg.train.eval_batch_size], return_features=True)
            feats.append(f.data)
    feats = np.concatenate(feats)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label"] + [f"f{i}" for i in range(feats.shape[1])])
        for i, (label, row) in enumerate(zip(split.y, feats)):
            w.writerow([i, int(label)] + [repr(float(v)) for v in row])
    print(f"wrote {path} ({len(feats)} rows)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="adapterx", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, checkpoint=False, split=None):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="config file; built-in defaults when omitted")
        p.add_argument("--out", help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint.npz; fresh initialisation when omitted")
        if split:
            p.add_argument("--split", choices=("train", "val", "test"), default=split)
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train and write report.json + checkpoint.npz")
    add("eval", cmd_eval, "accuracy on one split", checkpoint=True, split="test")
    add("params", cmd_params, "parameter ledger (text, and ledger.csv with --out)")
    p = add("route-stats", cmd_route_stats, "write expert_load.csv and token_paths.csv", checkpoint=True, split="val")
    p.add_argument("--path-samples", type=int, default=4, help="sequences included in token_paths.csv")
    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every trainable tensor")
    p.add_argument("--seed", type=int, default=0, help="seed of the parameter perturbation")
    p.add_argument("--samples", type=int, default=2)
    p.add_argument("--tol", type=float, default=TOLERANCE)
    add("export-features", cmd_export_features, "CLS features per sample as features.csv", checkpoint=True, split="val")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AdapterXError, OSError, KeyError) as exc:
        print(f"adapterx {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
