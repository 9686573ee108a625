"""Alternating multi-task optimisation of MKPNet.

Each step takes a single-task mini-batch, minimises

    alpha * (fine_ce + lam * kl) + (1 - alpha) * coarse_ce

and updates the shared groups together with that task's fine group only.
Batches of the two tasks are interleaved round-robin.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensorgrad as tg
from .data import InstancePair
from .evalx import accuracy, macro_f1
from .model import MKPNet
from .tasks import DRR, ERE

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    alpha: float = 0.9
    lam: float = 0.5
    batch_size: int = 32
    epochs: int = 20
    lr: float = 1e-3
    ratio: tuple = (1, 1)
    seed: int = 0
    teacher_forcing: bool = True
    clip_norm: float = 5.0
    target_task: str = ERE

    def __post_init__(self):
        self.ratio = tuple(int(r) for r in self.ratio)
        if not (math.isfinite(self.alpha) and math.isfinite(self.lam)):
            raise ValueError("alpha and lam must be finite")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if len(self.ratio) != 2 or min(self.ratio) < 1:
            raise ValueError(f"ratio must be two positive integers, got {self.ratio}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class StepRecord:
    step: int
    task: str
    fine_ce: float
    coarse_ce: float
    kl: float
    combined: float
    epoch: int = 0
    grad_norm: float = 0.0

    def to_json(self) -> str:
        return json.dumps({"type": "step", **asdict(self)})


def combined_loss(fine_ce, kl, coarse_ce, cfg: TrainerConfig):
    """alpha * (fine_ce + lam * kl) + (1 - alpha) * coarse_ce.

    Works on floats and on scalar Tensors (then the result is differentiable).
    """
    a, lam = cfg.alpha, cfg.lam
    if isinstance(fine_ce, tg.Tensor):
        inner = tg.add(fine_ce, tg.multiply(kl, lam))
        return tg.add(tg.multiply(inner, a), tg.multiply(coarse_ce, 1.0 - a))
    return a * (fine_ce + lam * kl) + (1.0 - a) * coarse_ce


def train_step(model: MKPNet, batch: Sequence[InstancePair], task: str, cfg: TrainerConfig,
               state: tg.OptimState, rng: np.random.Generator, step: int = 0, epoch: int = 0) -> StepRecord:
    if not batch:
        raise ValueError("train_step: empty batch")
    tasks = {p.task for p in batch}
    if tasks != {task}:
        raise ValueError(f"train_step: batch tasks {sorted(tasks)} but step task is {task}")
    params = model.params.for_task(task)
    for p in params.values():
        p.grad = None
    out = model.forward_train(batch, task, rng, teacher_forcing=cfg.teacher_forcing)
    loss = combined_loss(out.fine_ce, out.kl, out.coarse_ce, cfg)
    tg.backward(loss)
    norm = tg.clip_grad_norm(params, cfg.clip_norm)
    tg.optimizer_step(params, state)
    fine, coarse, kl = out.fine_ce.item(), out.coarse_ce.item(), out.kl.item()
    # logged in double precision from the logged parts; the float32 loss that
    # was differentiated differs only by rounding
    return StepRecord(step, task, fine, coarse, kl, combined_loss(fine, kl, coarse, cfg), epoch, norm)


def schedule(n_ere: int, n_drr: int, ratio=(1, 1)) -> list[str]:
    """Round-robin task order: ``ratio[0]`` ERE batches, then ``ratio[1]`` DRR
    batches, repeated; leftovers of the longer task go at the end."""
    order, i, j = [], 0, 0
    while i < n_ere or j < n_drr:
        for _ in range(ratio[0]):
            if i < n_ere:
                order.append(ERE)
                i += 1
        for _ in range(ratio[1]):
            if j < n_drr:
                order.append(DRR)
                j += 1
    return order


def _batches(data: Sequence[InstancePair], size: int, rng) -> list:
    idx = rng.permutation(len(data))
    return [[data[k] for k in idx[s:s + size]] for s in range(0, len(data), size)]


def evaluate(model: MKPNet, data: Sequence[InstancePair], task: str, oracle: bool | None = None) -> dict:
    preds = model.predict_batched(list(data), task, oracle=oracle)
    spec = model.spec(task)
    gold = [p.fine_label for p in data]
    fine = [p.fine_label for p in preds]
    res = {"acc": accuracy(gold, fine), "f1": macro_f1(gold, fine, spec.fine_labels)}
    if model.ablation.use_coarse:
        cg = [p.coarse_label for p in data]
        cp = [p.coarse_label for p in preds]
        res["coarse_acc"] = accuracy(cg, cp)
        res["coarse_f1"] = macro_f1(cg, cp, sorted({lab.name for lab in spec.fine_to_coarse.values()}))
    return res


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    records: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def log_lines(self) -> list[str]:
        lines = [r.to_json() for r in self.records]
        lines += [json.dumps({"type": "epoch", **e}) for e in self.epochs]
        return lines


def train(model: MKPNet, ere_data: Sequence[InstancePair], drr_data: Sequence[InstancePair] | None,
          cfg: TrainerConfig, dev_data: Sequence[InstancePair] | None = None) -> TrainResult:
    """Train in place and load the best-dev parameters before returning.

    With knowledge projection off only the target task's data is used.
    Dev selection uses target-task accuracy (first best epoch wins); without
    dev data the last epoch is kept.
    """
    target = cfg.target_task
    data = {ERE: list(ere_data), DRR: list(drr_data or [])}
    if not data[target]:
        raise ValueError(f"no {target} training data")
    if model.ablation.use_projection:
        if not data[ERE] or not data[DRR]:
            raise ValueError("knowledge projection needs both ERE and DRR training data")
    else:
        data = {t: (d if t == target else []) for t, d in data.items()}

    state = tg.OptimState(lr=cfg.lr)
    root = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    shuffle_rng, noise_rng = root.spawn(2)
    result = TrainResult(model.params.state_dict(), 0)
    best = -1.0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        batches = {t: _batches(d, cfg.batch_size, shuffle_rng) if d else [] for t, d in data.items()}
        pos = {ERE: 0, DRR: 0}
        first = len(result.records)
        for task in schedule(len(batches[ERE]), len(batches[DRR]), cfg.ratio):
            batch = batches[task][pos[task]]
            pos[task] += 1
            step += 1
            rec = train_step(model, batch, task, cfg, state, noise_rng, step, epoch)
            result.records.append(rec)
        summary = {"epoch": epoch, "steps": step}
        if dev_data:
            summary.update({f"dev_{k}": v for k, v in evaluate(model, dev_data, target, oracle=False).items()})
            if summary["dev_acc"] > best:
                best = summary["dev_acc"]
                result.best_state, result.best_epoch = model.params.state_dict(), epoch
        else:
            result.best_state, result.best_epoch = model.params.state_dict(), epoch
        recent = [r.combined for r in result.records[first:]]
        summary["mean_loss"] = float(np.mean(recent)) if recent else 0.0
        result.epochs.append(summary)
        log.info("epoch %d: %s", epoch, summary)
    model.params.load_state_dict(result.best_state)
    return result
