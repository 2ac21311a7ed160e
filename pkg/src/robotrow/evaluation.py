"""Metrics, response probes and scalability sweeps.

Quantiles use linear interpolation between closest ranks (numpy's default
``"linear"`` method). Episodes that stop early are extended by holding their
final state so every series spans the full horizon.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import nn
from .controllers import Controller, input_kind, manual_p_velocity, network_input
from .dataset import RunRecord, group_runs, record_pairs, sequences_for_runs
from .episode import RunLog, run_episode
from .sensing import BL, BR, FC, SensorFrame, sense_all
from .world import ConfigError, WorldConfig, ground_truth_colours, spawn_world, world_from_positions

SWEEP_SIZES = (10, 20, 30, 40, 50)


class MetricError(ValueError):
    pass


def r2_score(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.ndim != 1 or len(pred) < 2:
        raise MetricError("r2_score needs two equal-length vectors of at least 2 values")
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("r2_score is undefined for a constant target")
    return 1.0 - float(np.sum((target - pred) ** 2)) / ss_tot


@dataclass
class MetricSeries:
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    d10: np.ndarray
    d90: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    COLUMNS = ("step", "median", "q25", "q75", "d10", "d90")

    def __len__(self) -> int:
        return len(self.median)

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MetricSeries":
        """``samples`` is (steps, values): one row of observations per step."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape[0] == 0:
            return cls(*(np.zeros(0) for _ in range(7)))
        q = np.quantile(samples, [0.5, 0.25, 0.75, 0.1, 0.9], axis=1, method="linear")
        return cls(q[0], q[1], q[2], q[3], q[4], samples.mean(axis=1), samples.std(axis=1))

    def rows(self) -> list[tuple]:
        return [
            (t, self.median[t], self.q25[t], self.q75[t], self.d10[t], self.d90[t]) for t in range(len(self))
        ]

    def mean_rows(self) -> list[tuple]:
        return [(t, self.mean[t], self.std[t]) for t in range(len(self))]


def _hold(arr: np.ndarray, length: int) -> np.ndarray:
    if arr.shape[0] >= length:
        return arr[:length]
    pad = np.repeat(arr[-1:], length - arr.shape[0], axis=0)
    return np.concatenate([arr, pad])


def common_horizon(logs: Sequence[RunLog]) -> int:
    return max(log.steps for log in logs)


def distance_stats(logs: Sequence[RunLog], horizon: Optional[int] = None) -> MetricSeries:
    """Per-step |x - goal| aggregates over every moving robot of every run."""
    logs = list(logs)
    if not logs:
        raise MetricError("no run logs")
    if horizon is None:
        horizon = common_horizon(logs)
    cols = [_hold(log.errors, horizon + 1)[:, 1:-1] for log in logs]
    return MetricSeries.from_samples(np.concatenate(cols, axis=1))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def rows(self) -> list[tuple]:
        return list(zip(self.thresholds, self.fpr, self.tpr))


def roc_auc(scores, labels) -> RocCurve:
    """Threshold sweep over the distinct scores, area by the trapezoid rule.

    Tied scores enter together, which gives the tie-corrected rank statistic.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC needs both classes")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_run = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = (last_of_run + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_run]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auc)


def wrong_colour_rate(logs: Sequence[RunLog], horizon: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Wrong colours per step: (count / number of runs, fraction of all robots)."""
    logs = list(logs)
    if not logs:
        return np.zeros(0), np.zeros(0)
    if horizon is None:
        horizon = common_horizon(logs)
    wrong = np.zeros(horizon + 1)
    robots = 0
    for log in logs:
        truth = ground_truth_colours(log.n_agents)
        wrong += (_hold(log.colours, horizon + 1) != truth[None, :]).sum(axis=1)
        robots += log.n_agents
    return wrong / len(logs), wrong / robots


# --- probes ---------------------------------------------------------------------


def probe_inputs(kind, axis: str, grid) -> np.ndarray:
    """Raw sensing vectors with a single neighbour seen ahead or behind."""
    kind = input_kind(kind)
    grid = np.asarray(grid, dtype=float)
    base = np.zeros((len(grid), 7))
    if axis == "front_only":
        base[:, FC] = grid
    elif axis == "rear_only":
        base[:, BL] = grid
        base[:, BR] = grid
    else:
        raise ConfigError(f"unknown probe axis {axis!r}")
    if kind.variant == "all_sensors":
        return np.concatenate([base, base], axis=1)
    return base


def probe_sensing(model: nn.MlpParams, kind, axis: str = "front_only", grid=None) -> np.ndarray:
    """Speed returned by a network for synthetic sensing; received messages are 0."""
    kind = input_kind(kind)
    if grid is None:
        grid = np.linspace(0.0, 4500.0, 451)
    x = network_input(probe_inputs(kind, axis, grid))
    if model.arch == "single_comm":
        x = np.concatenate([x, np.zeros((len(x), 2))], axis=1)
    elif model.arch != "distributed":
        raise ConfigError(f"cannot probe sensing on a {model.arch} model")
    if model.input_width != x.shape[1]:
        raise ConfigError(f"model input width {model.input_width} does not fit {kind.variant}")
    out, _ = nn.forward(model, x)
    return out[:, 0]


def probe_position(controller: Controller, left_x: float, right_x: float, positions,
                   jitters: int = 100, jitter: float = 0.5, seed: int = 0,
                   config: Optional[WorldConfig] = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of the speed of a robot placed between two fixed ones."""
    cfg = config or WorldConfig(n_agents=3, motor_noise_rel=0.0)
    length = cfg.robot_length
    if not left_x < right_x - 2 * length:
        raise ConfigError("no room for a robot between the two fixed ones")
    positions = np.asarray(positions, dtype=float)
    lo, hi = left_x + length, right_x - length
    bad = positions[(positions < lo) | (positions > hi)]
    if len(bad):
        raise ConfigError(f"position {bad[0]} overlaps a fixed robot")
    if jitters > 1:
        # antithetic pairs keep the jitter set symmetric about zero
        half = np.random.default_rng(seed).uniform(-jitter, jitter, size=(jitters + 1) // 2)
        eps = np.concatenate([half, -half])[:jitters]
    else:
        eps = np.zeros(1)
    means, stds = [], []
    for p in positions:
        speeds = []
        for e in eps:
            world = world_from_positions(cfg, [left_x, min(max(p + e, lo), hi), right_x])
            frames = sense_all(world, np.zeros(3))
            speeds.append(controller.decide(world, frames).speeds[1])
        means.append(np.mean(speeds))
        stds.append(np.std(speeds))
    return np.array(means), np.array(stds)


# --- episodes and sweeps --------------------------------------------------------------


def episode_world(n_agents, seed: int, run: int, avg_gap="variable", motor_noise_rel: float = 0.027,
                  goal_tolerance: float = 0.5):
    """Spawn for one evaluation run; a (lo, hi) agent range is sampled per run."""
    if not isinstance(n_agents, (int, np.integer)):
        lo, hi = n_agents
        n_agents = int(np.random.default_rng([seed, run, 1]).integers(lo, hi + 1))
    cfg = WorldConfig(n_agents=int(n_agents), avg_gap=avg_gap, motor_noise_rel=motor_noise_rel,
                      goal_tolerance=goal_tolerance)
    return spawn_world(cfg, [seed, run])


def run_many(controller: Controller, n_agents, runs: int, seed: int, avg_gap="variable",
             horizon: Optional[int] = None, motor_noise_rel: float = 0.027,
             goal_tolerance: float = 0.5) -> list[RunLog]:
    """Episodes on spawns keyed by (seed, run); identical seeds give identical spawns."""
    logs = []
    for r in range(runs):
        world = episode_world(n_agents, seed, r, avg_gap, motor_noise_rel, goal_tolerance)
        h = horizon
        if h is None:
            h = world.config.max_steps if controller.task == 1 else max(world.config.max_steps, world.n_agents)
        logs.append(run_episode(world, controller, h))
    return logs


def scalability_sweep(controller: Controller, sizes: Iterable[int] = SWEEP_SIZES, runs: int = 20,
                      seed: int = 0, avg_gap="variable", motor_noise_rel: float = 0.027,
                      goal_tolerance: float = 0.5) -> dict:
    """Per robot-count metrics: distance series (spacing) or wrong-colour series (colouring)."""
    out = {}
    for n in sizes:
        logs = run_many(controller, n, runs, seed, avg_gap, motor_noise_rel=motor_noise_rel,
                        goal_tolerance=goal_tolerance)
        if controller.task == 1:
            out[n] = distance_stats(logs, horizon=40)
        else:
            out[n] = wrong_colour_rate(logs, horizon=max(40, n))
    return out


# --- held-out scores on recorded data ---------------------------------------------------


def _record_frame(r: RunRecord) -> SensorFrame:
    return SensorFrame(r.prox_values, r.prox_comm, r.rx_left, r.rx_right)


def r2_on_records(records: list[RunRecord], controller: str, model: Optional[nn.MlpParams] = None,
                  kind="prox_values", seed: int = 0) -> float:
    """R² of a controller's speed against the recorded (expert) speed on moving robots."""
    kind = input_kind(kind)
    if controller == "manual":
        movers = [r for r in records if 0 < r.agent_id < r.n_agents - 1]
        pred = [manual_p_velocity(_record_frame(r), kind) for r in movers]
        return r2_score(pred, [r.motor_target for r in movers])
    if controller == "net-distributed":
        x, y = record_pairs(records, kind)
        out, _ = nn.forward(model, x)
        return r2_score(np.clip(out[:, 0], -16.6, 16.6), y)
    if controller == "net-comm":
        runs = group_runs(records)
        seqs = sequences_for_runs(runs, list(runs), "comm", kind)
        res = nn.commnet_unroll(model, seqs, nn.random_init_comm(seqs, np.random.default_rng(seed)))
        m = seqs.loss_mask
        return r2_score(np.clip(res.primary[m], -16.6, 16.6), seqs.targets[m])
    raise ConfigError(f"no R² for controller {controller!r}")


def colour_scores(records: list[RunRecord], model: nn.MlpParams, seed: int = 0,
                  step: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """P(blue) at one unroll step of every held-out sequence, with the true labels."""
    runs = group_runs(records)
    seqs = sequences_for_runs(runs, list(runs), "colour")
    res = nn.commnet_unroll(model, seqs, nn.random_init_comm(seqs, np.random.default_rng(seed)))
    m = seqs.mask
    return res.primary[:, step][m], seqs.targets[:, step][m]


# --- CSV ------------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def emit_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def emit_series_csv(path, series: MetricSeries) -> Path:
    return emit_csv(path, MetricSeries.COLUMNS, series.rows())


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
