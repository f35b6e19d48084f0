"""First-party baseline run that fixes the toy learning-efficacy bounds.

    python3 benchmarks/oracle_run.py [--out benchmarks/oracle_run.json]

Trains linear-probe, full fine-tuning and smoa+block-specific on the
default synthetic task with default settings and records final val/test
accuracy, trainable counts and the nearest-template (Bayes) accuracy.
The acceptance suite reads the bounds stored here.
"""

import argparse
import dataclasses
import json
from pathlib import Path

import numpy as np

from adapterx.config import ExperimentConfig
from adapterx.data import SyntheticTask, make_task, nearest_template_predict
from adapterx.ledger import count_params
from adapterx.model import build_model
from adapterx.train import train

MODES = ("linear-probe", "full", "smoa+block-specific")


def run(out):
    base = ExperimentConfig().validate()
    data = make_task(SyntheticTask.from_config(base))
    results = {}
    for mode in MODES:
        cfg = dataclasses.replace(base, model=dataclasses.replace(base.model, peft_mode=mode))
        report, model = train(cfg, data)
        ledger = count_params(model)
        results[mode] = {
            "config_hash": cfg.hash(),
            "final_val_acc": report.final_val_acc,
            "best_val_acc": max(e["val_acc"] for e in report.epochs),
            "test_acc": report.test_acc,
            "headline_params": ledger.headline,
            "full_finetune_params": ledger.full_finetune,
            "wall_time_s": round(report.wall_time, 1),
        }
        print(f"{mode:<22} val={report.final_val_acc:.3f} test={report.test_acc:.3f} "
              f"params={ledger.headline} ({report.wall_time:.0f}s)", flush=True)
    bayes = float(np.mean(nearest_template_predict(data, data.val.x) == data.val.y))
    doc = {
        "task": dataclasses.asdict(base.task),
        "epochs": base.train.epochs,
        "nearest_template_val_acc": bayes,
        "runs": results,
        "bounds": {
            "smoa_block_specific_min_val_acc": 0.95,
            "max_gap_to_full": 0.02,
            "max_param_ratio": 0.10,
        },
    }
    Path(out).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).with_name("oracle_run.json")))
    run(ap.parse_args().out)
