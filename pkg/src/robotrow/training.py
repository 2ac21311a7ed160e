"""Imitation-learning pipelines for the three network shapes."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .controllers import input_kind
from .dataset import (
    RunRecord,
    SplitSpec,
    group_runs,
    read_dataset,
    record_pairs,
    sequences_for_runs,
    shuffle_split,
)
from .world import ConfigError

log = logging.getLogger(__name__)

PIPELINES = ("distributed", "comm", "colour")
PIPELINE_ARCH = {"distributed": "distributed", "comm": "single_comm", "colour": "colour"}
DEFAULTS = {
    "distributed": {"epochs": 50, "lr": 0.01, "batch_size": 100},
    "comm": {"epochs": 500, "lr": 0.001, "batch_size": 10},
    "colour": {"epochs": 100, "lr": 0.001, "batch_size": 10},
}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    pipeline: str = "distributed"
    input_kind: str = "prox_values"
    epochs: Optional[int] = None
    lr: Optional[float] = None
    batch_size: Optional[int] = None
    seed: int = 0
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}; choose from {', '.join(PIPELINES)}")
        input_kind(self.input_kind)
        for key, value in DEFAULTS[self.pipeline].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError("epochs, batch_size and lr must be non-negative (batch_size >= 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def arch(self) -> str:
        return PIPELINE_ARCH[self.pipeline]


@dataclass
class LossCurve:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train)

    def to_rows(self) -> list[tuple[int, float, float]]:
        return [(e + 1, t, v) for e, (t, v) in enumerate(zip(self.train, self.val))]


@dataclass
class TrainResult:
    params: nn.MlpParams
    curve: LossCurve
    split: tuple
    best_epoch: int


def _records(cfg: TrainConfig, records) -> list[RunRecord]:
    if records is not None:
        return list(records)
    if cfg.dataset is None:
        raise ConfigError("no dataset given")
    return read_dataset(cfg.dataset)


def _check_finite(value: float, epoch: int, batch: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {batch}")


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Batch order of one epoch: a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch, 7]).permutation(n)


def _keep_best(cfg, params, val, best, epoch):
    if val < best[0]:
        best[:] = [val, params.copy(), epoch + 1]
        if cfg.checkpoint:
            nn.save_checkpoint(params, cfg.checkpoint)


def train_distributed(cfg: TrainConfig, records=None) -> TrainResult:
    """Per-record regression from sensing to the expert's speed (MSE, Adam)."""
    runs = group_runs(_records(cfg, records))
    split = shuffle_split(list(runs), SplitSpec(seed=cfg.seed))
    pick = lambda ids: [r for i in ids for r in runs[i]]  # noqa: E731
    x_tr, y_tr = record_pairs(pick(split[0]), cfg.input_kind)
    x_va, y_va = record_pairs(pick(split[1]), cfg.input_kind)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise TrainingError("empty split")
    kind = input_kind(cfg.input_kind)
    params = nn.init_params("distributed", kind.width, seed=cfg.seed)
    state = nn.AdamState.for_params(params, cfg.lr)
    curve = LossCurve()
    best = [np.inf, params.copy(), 0]
    n_batches = int(np.ceil(len(y_tr) / cfg.batch_size))

    def full_loss(p, x, y):
        out, _ = nn.forward(p, x)
        return nn.mse_loss(out[:, 0], y)[0]

    for epoch in range(cfg.epochs):
        order = epoch_order(cfg.seed, epoch, len(y_tr))
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            out, tape = nn.forward(params, x_tr[idx])
            loss, g = nn.mse_loss(out[:, 0], y_tr[idx])
            _check_finite(loss, epoch, b)
            grads, _ = nn.backward(params, tape, g[:, None])
            params, state = nn.adam_step(params, grads, state)
        tr, va = full_loss(params, x_tr, y_tr), full_loss(params, x_va, y_va)
        _check_finite(tr, epoch, n_batches)
        _check_finite(va, epoch, n_batches)
        curve.train.append(tr)
        curve.val.append(va)
        _keep_best(cfg, params, va, best, epoch)
        log.debug("epoch %d train %.6g val %.6g", epoch + 1, tr, va)
    final = best[1] if cfg.epochs else params
    return TrainResult(final, curve, split, best[2])


def _train_unrolled(cfg: TrainConfig, records) -> TrainResult:
    runs = group_runs(_records(cfg, records))
    split = shuffle_split(list(runs), SplitSpec(seed=cfg.seed))
    n_max = max([10] + [recs[0].n_agents for recs in runs.values()])
    try:
        train = sequences_for_runs(runs, split[0], cfg.pipeline, cfg.input_kind, n_max)
        val = sequences_for_runs(runs, split[1], cfg.pipeline, cfg.input_kind, n_max)
    except ValueError as exc:
        raise TrainingError("empty split") from exc
    width = 0 if cfg.pipeline == "colour" else input_kind(cfg.input_kind).width
    params = nn.init_params(cfg.arch, width, seed=cfg.seed)
    state = nn.AdamState.for_params(params, cfg.lr)
    val_comm = nn.random_init_comm(val, np.random.default_rng([cfg.seed, 99]))
    train_comm = nn.random_init_comm(train, np.random.default_rng([cfg.seed, 98]))
    curve = LossCurve()
    best = [np.inf, params.copy(), 0]
    n_batches = int(np.ceil(len(train) / cfg.batch_size))
    for epoch in range(cfg.epochs):
        order = epoch_order(cfg.seed, epoch, len(train))
        for b in range(n_batches):
            batch = train.take(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            init = nn.random_init_comm(batch, np.random.default_rng([cfg.seed, epoch, b]))
            loss, grads, _ = nn.unroll_loss(params, batch, init)
            _check_finite(loss, epoch, b)
            params, state = nn.adam_step(params, grads, state)
        tr = nn.unroll_loss(params, train, train_comm)[0]
        va = nn.unroll_loss(params, val, val_comm)[0]
        _check_finite(tr, epoch, n_batches)
        _check_finite(va, epoch, n_batches)
        curve.train.append(tr)
        curve.val.append(va)
        _keep_best(cfg, params, va, best, epoch)
        log.debug("epoch %d train %.6g val %.6g", epoch + 1, tr, va)
    final = best[1] if cfg.epochs else params
    return TrainResult(final, curve, split, best[2])


def train_comm(cfg: TrainConfig, records=None) -> TrainResult:
    """Speed plus latent message, unrolled over two steps (MSE on the speed)."""
    if cfg.pipeline != "comm":
        cfg = dataclasses.replace(cfg, pipeline="comm")
    return _train_unrolled(cfg, records)


def train_colour(cfg: TrainConfig, records=None) -> TrainResult:
    """P(blue) plus latent message from received messages only (BCE)."""
    if cfg.pipeline != "colour":
        cfg = dataclasses.replace(cfg, pipeline="colour")
    return _train_unrolled(cfg, records)


def train(cfg: TrainConfig, records=None) -> TrainResult:
    return {"distributed": train_distributed, "comm": train_comm, "colour": train_colour}[cfg.pipeline](cfg, records)


def load_for_pipeline(path, pipeline: str) -> nn.MlpParams:
    """Load a checkpoint, refusing one trained for another pipeline."""
    return nn.load_checkpoint(path, arch=PIPELINE_ARCH[pipeline])
