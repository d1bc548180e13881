"""Two-stage training: SGD with momentum, a multistep schedule, per-epoch
validation, checkpoints and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from stavis import tensor as T
from stavis.checkpoint import Checkpoint, save_checkpoint
from stavis.config import OptimizerConfig, RunConfig
from stavis.data.clips import ClipSample, VideoSource, make_clips
from stavis.errors import ConfigError, DegenerateError, NumericError
from stavis.model import STAGES, STAViS
from stavis.nn import Params

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "split", "step", "loss", "ce", "cc", "nss", "lr")


class SGD:
    """Heavy-ball SGD with L2 weight decay folded into the gradient:
    ``v = momentum * v + (g + wd * w)``, ``w -= lr * v``."""

    def __init__(self, params: dict[str, T.Tensor], cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.lr = cfg.lr
        self.velocity = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values() if p.grad is not None))

    def step(self) -> None:
        scale = 1.0
        if self.cfg.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.cfg.clip_norm:
                scale = self.cfg.clip_norm / norm
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad * scale
            v = self.velocity[name]
            v *= self.cfg.momentum
            v += g + self.cfg.weight_decay * p.data
            p.data -= self.lr * v


def learning_rate(cfg: OptimizerConfig, epoch: int, epochs: int) -> float:
    """Multistep schedule; milestones are fractions of ``epochs``."""
    passed = sum(epoch >= int(round(m * epochs)) for m in cfg.milestones)
    return cfg.lr * cfg.gamma**passed


def collate(samples: Sequence[ClipSample]):
    clips = np.stack([s.clip for s in samples])
    audio = None if samples[0].audio is None else np.stack([s.audio.samples for s in samples])
    y_fix = np.stack([s.gt.y_fix for s in samples])
    y_den = np.stack([s.gt.y_den for s in samples])
    return clips, audio, y_fix, y_den


def _matching(params: Params, prefixes: Sequence[str]) -> list[str]:
    return [n for n in sorted(params) if any(n.startswith(p) for p in prefixes)]


@dataclass
class TrainResult:
    stage: str
    steps: int = 0
    epochs: int = 0
    history: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = -1
    stop_reason: str = ""

    def losses(self, split: str = "train") -> list[float]:
        return [row["loss"] for row in self.history if row["split"] == split]


def _terms_row(terms) -> dict[str, float]:
    return {k: float(v.item() if isinstance(v, T.Tensor) else v) for k, v in terms.items()}


def evaluate_loss(model: STAViS, stage: str, samples: Sequence[ClipSample], cfg: RunConfig) -> dict[str, float]:
    """Sample-weighted mean loss terms over ``samples`` without recording gradients."""
    totals = {"total": 0.0, "ce": 0.0, "cc": 0.0, "nss": 0.0}
    bs = cfg.train.batch_size
    with T.no_grad():
        for lo in range(0, len(samples), bs):
            batch = samples[lo:lo + bs]
            terms = _terms_row(model.loss_terms(stage, *collate(batch), cfg.loss.weights))
            for k in totals:
                totals[k] += terms[k] * len(batch)
    n = max(len(samples), 1)
    return {k: v / n for k, v in totals.items()}


def train_stage(
    model: STAViS,
    stage: str,
    train_sources: Sequence[VideoSource],
    val_sources: Sequence[VideoSource],
    cfg: RunConfig,
    out_dir=None,
    restore_best: bool = True,
) -> TrainResult:
    """Train ``model`` in place for one stage.

    Each epoch draws one clip per chunk of every training video, shuffles
    them with the run seed and steps through mini-batches. Validation loss
    (training loss when there is no validation set) drives early stopping.
    With ``out_dir`` set, writes ``train_log_<stage>.csv`` and per-epoch checkpoints.
    """
    if stage not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}, got {stage!r}")
    tc = cfg.train
    model.stage = stage
    for name in _matching(model.params, tc.zero):
        model.params[name].data[...] = 0.0
    frozen = set(_matching(model.params, tc.frozen))
    trainable = {n: p for n, p in model.stage_params(stage).items() if n not in frozen}
    opt = SGD(trainable, cfg.optimizer)
    result = TrainResult(stage)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = (out / f"train_log_{stage}.csv").open("w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()

    val_samples = [s for src in val_sources for s in make_clips(src, "test", chunk=cfg.data.chunk)]
    best_params = None
    stale = 0

    def emit(row):
        result.history.append(row)
        if writer is not None:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
            fh.flush()

    try:
        for epoch in range(tc.epochs):
            opt.lr = learning_rate(cfg.optimizer, epoch, tc.epochs)
            samples = [s for src in train_sources for s in make_clips(src, "train", tc.seed, epoch, cfg.data.chunk)]
            if not samples:
                raise ConfigError("no training clips: every video is too short or lacks fixations")
            order = np.random.default_rng([tc.seed, epoch, 1]).permutation(len(samples))
            sums = {"total": 0.0, "ce": 0.0, "cc": 0.0, "nss": 0.0}
            seen = 0
            for lo in range(0, len(order), tc.batch_size):
                if tc.max_steps is not None and result.steps >= tc.max_steps:
                    break
                batch = [samples[i] for i in order[lo:lo + tc.batch_size]]
                opt.zero_grad()
                try:
                    terms = model.loss_terms(stage, *collate(batch), cfg.loss.weights)
                except DegenerateError as exc:
                    raise NumericError(f"prediction collapsed at epoch {epoch}, step {result.steps}: {exc}") from exc
                row = _terms_row(terms)
                if not all(math.isfinite(v) for v in row.values()):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, step {result.steps}: "
                        + ", ".join(f"{k}={v}" for k, v in row.items())
                    )
                T.backward(terms["total"])
                opt.step()
                result.steps += 1
                for k in sums:
                    sums[k] += row[k] * len(batch)
                seen += len(batch)
            if seen == 0:
                break
            result.epochs = epoch + 1
            emit({"epoch": epoch, "split": "train", "step": result.steps, "loss": sums["total"] / seen,
                  "ce": sums["ce"] / seen, "cc": sums["cc"] / seen, "nss": sums["nss"] / seen, "lr": opt.lr})
            if val_samples:
                v = evaluate_loss(model, stage, val_samples, cfg)
                emit({"epoch": epoch, "split": "val", "step": result.steps, "loss": v["total"],
                      "ce": v["ce"], "cc": v["cc"], "nss": v["nss"], "lr": opt.lr})
                monitor = v["total"]
            else:
                monitor = sums["total"] / seen
            if out is not None:
                save_checkpoint(out / f"{stage}_epoch{epoch:03d}.ckpt", make_checkpoint(model, cfg, stage, epoch, result.steps, opt))
            if monitor < result.best_val:
                result.best_val, result.best_epoch, stale = monitor, epoch, 0
                best_params = {n: p.data.copy() for n, p in model.params.items()}
            else:
                stale += 1
                if stale >= tc.patience:
                    result.stop_reason = f"no improvement for {tc.patience} epochs"
                    break
            if tc.max_steps is not None and result.steps >= tc.max_steps:
                result.stop_reason = "max_steps"
                break
        else:
            result.stop_reason = "max epochs"
    finally:
        if writer is not None:
            fh.close()

    if restore_best and best_params is not None:
        for n, value in best_params.items():
            model.params[n].data[...] = value
    if out is not None:
        save_checkpoint(out / f"{stage}_final.ckpt", make_checkpoint(model, cfg, stage, result.epochs, result.steps, opt))
    log.info("%s stage: %d steps, %d epochs, best loss %.4f at epoch %d (%s)",
             stage, result.steps, result.epochs, result.best_val, result.best_epoch, result.stop_reason)
    return result


def make_checkpoint(model: STAViS, cfg: RunConfig, stage: str, epoch: int, step: int, opt: SGD | None = None) -> Checkpoint:
    params = {n: p.data.copy() for n, p in model.params.items()}
    momentum = {n: v.copy() for n, v in opt.velocity.items()} if opt is not None else {}
    return Checkpoint(params, cfg.to_json(), stage, epoch, step, momentum)
