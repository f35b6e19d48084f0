"""Training loop for task loss plus weighted load balancing."""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import SyntheticTask, make_task
from .errors import DivergenceError
from .model import build_model
from .rng import Rng


class AdamW:
    """Adam with decoupled weight decay; params whose name contains ``norm`` are not decayed."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]
        self.decay = [("norm" not in n) for n, _ in self.params]
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (_, p) in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            if self.decay[i] and self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None


def lr_at(cfg, step, total_steps):
    if cfg.schedule == "constant" or total_steps <= 1:
        return cfg.lr
    return 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / total_steps))


def predict(model, x, batch_size=200):
    preds = []
    with T.no_grad():
        for lo in range(0, len(x), batch_size):
            preds.append(np.argmax(model.forward(x[lo : lo + batch_size]).data, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def accuracy(model, split, batch_size=200):
    return float(np.mean(predict(model, split.x, batch_size) == split.y))


@dataclass
class TrainReport:
    config_hash: str
    peft_mode: str
    optimizer: dict
    trainable_params: int
    headline_params: int
    epochs: list = field(default_factory=list)  # per-epoch metric dicts
    steps: list = field(default_factory=list)  # [step, lr, task, balance, total]
    test_acc: float = float("nan")
    wall_time: float = 0.0

    @property
    def final_val_acc(self):
        return self.epochs[-1]["val_acc"] if self.epochs else float("nan")

    def metrics(self):
        """Everything except wall time; equal across reruns of the same config."""
        d = asdict(self)
        d.pop("wall_time")
        return d

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.to_json())


def train(cfg, data=None, out_dir=None, model=None, max_steps=None):
    """Fit the trainable parameters; returns ``(report, model)``.

    Frozen parameters are never handed to the optimizer.  ``max_steps``
    (or ``cfg.train.max_steps`` when positive) caps the number of updates.
    With ``out_dir`` set, ``report.json`` and ``checkpoint.npz`` are written.
    """
    from .ledger import count_params

    start = time.perf_counter()
    cfg.validate()
    tc, mc = cfg.train, cfg.model
    if data is None:
        data = make_task(SyntheticTask.from_config(cfg))
    if model is None:
        model = build_model(mc)
    ledger = count_params(model)
    opt = AdamW(model.named_parameters(), tc.lr, (tc.beta1, tc.beta2), tc.adam_eps, tc.weight_decay)
    rng = Rng(mc.seed).child("batches")
    n = len(data.train)
    per_epoch = math.ceil(n / tc.batch_size)
    total = per_epoch * tc.epochs
    cap = max_steps if max_steps is not None else (tc.max_steps or None)
    if cap is not None:
        total = min(total, cap)

    report = TrainReport(
        config_hash=cfg.hash(),
        peft_mode=mc.peft_mode,
        optimizer={
            "name": "adamw", "lr": tc.lr, "betas": [tc.beta1, tc.beta2], "eps": tc.adam_eps,
            "weight_decay": tc.weight_decay, "decay_excludes": "norm parameters",
            "schedule": tc.schedule, "batch_size": tc.batch_size, "total_steps": total,
        },
        trainable_params=ledger.total_trainable,
        headline_params=ledger.headline,
    )
    step = 0
    for epoch in range(tc.epochs):
        if step >= total:
            break
        order = rng.permutation(n)
        sums = np.zeros(3)
        count = 0
        for lo in range(0, n, tc.batch_size):
            if step >= total:
                break
            idx = order[lo : lo + tc.batch_size]
            lr = lr_at(tc, step, total)
            opt.zero_grad()
            loss, task, balance, _ = model.loss(data.train.x[idx], data.train.y[idx])
            if not math.isfinite(loss.item()):
                raise DivergenceError(step, loss.item())
            loss.backward()
            opt.step(lr)
            row = [task.item(), balance.item(), loss.item()]
            report.steps.append([step, lr] + row)
            sums += row
            count += 1
            step += 1
        report.epochs.append({
            "epoch": epoch,
            "task_loss": sums[0] / count,
            "balance_loss": sums[1] / count,
            "total_loss": sums[2] / count,
            "train_acc": accuracy(model, data.train, tc.eval_batch_size),
            "val_acc": accuracy(model, data.val, tc.eval_batch_size),
        })
    report.test_acc = accuracy(model, data.test, tc.eval_batch_size)
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "report.json")
        save_checkpoint(model, out / "checkpoint.npz", report.config_hash)
    return report, model
