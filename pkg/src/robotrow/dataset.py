"""Demonstration datasets: generation, JSON-Lines codec, splits and sequences."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .controllers import input_kind, make_controller, network_input
from .episode import RunLog, run_episode
from .nn import SequenceBatch
from .world import ConfigError, WorldConfig, ground_truth_colours, spawn_world

GEN_CONTROLLERS = ("expert", "manual", "manual-colour")


class DatasetError(ValueError):
    pass


@dataclass
class RunRecord:
    run_id: int
    step: int
    agent_id: int
    pose_x: float
    prox_values: list
    prox_comm: list
    rx_left: float
    rx_right: float
    motor_target: float
    tx_message: float
    colour: int
    goal_x: float
    n_agents: int
    avg_gap: float


RECORD_FIELDS = tuple(f.name for f in dataclasses.fields(RunRecord))
_INT_FIELDS = {"run_id", "step", "agent_id", "colour", "n_agents"}
_VEC_FIELDS = {"prox_values", "prox_comm"}


@dataclass
class GenConfig:
    controller: str = "expert"
    n_runs: int = 1000
    n_agents: tuple = (5, 10)
    avg_gap: Union[float, str] = "variable"
    seed: int = 0
    kind: str = "prox_values"
    motor_noise_rel: float = 0.027
    goal_tolerance: float = 0.5
    max_steps: int = 40

    def __post_init__(self):
        if isinstance(self.n_agents, int):
            self.n_agents = (self.n_agents, self.n_agents)
        self.n_agents = tuple(int(v) for v in self.n_agents)
        if self.controller not in GEN_CONTROLLERS:
            raise ConfigError(f"cannot generate with controller {self.controller!r}; choose from {', '.join(GEN_CONTROLLERS)}")
        lo, hi = self.n_agents
        if lo > hi:
            raise ConfigError(f"empty agent-count range {self.n_agents}")
        if self.n_runs < 0:
            raise ConfigError("n_runs must be non-negative")
        if not isinstance(self.avg_gap, str) and self.avg_gap < 0:
            raise ConfigError("avg_gap must be non-negative")
        input_kind(self.kind)

    def world_config(self, n_agents: int) -> WorldConfig:
        return WorldConfig(
            n_agents=n_agents,
            avg_gap=self.avg_gap,
            motor_noise_rel=self.motor_noise_rel,
            goal_tolerance=self.goal_tolerance,
            max_steps=self.max_steps,
            rng_seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["n_agents"] = list(self.n_agents)
        return d


def run_seed(seed: int, run_id: int) -> list[int]:
    """Independent stream per run, derived from the command seed."""
    return [int(seed), int(run_id)]


def simulate_run(cfg: GenConfig, run_id: int) -> RunLog:
    pick = np.random.default_rng(run_seed(cfg.seed, run_id) + [1])
    n = int(pick.integers(cfg.n_agents[0], cfg.n_agents[1] + 1))
    world = spawn_world(cfg.world_config(n), run_seed(cfg.seed, run_id))
    controller = make_controller(cfg.controller, kind=cfg.kind)
    return run_episode(world, controller, cfg.max_steps)


def log_to_records(log: RunLog, run_id: int) -> list[RunRecord]:
    n = log.n_agents
    out = []
    for t in range(log.steps):
        for i in range(n):
            out.append(RunRecord(
                run_id=run_id,
                step=t,
                agent_id=i,
                pose_x=float(log.positions[t, i]),
                prox_values=[float(v) for v in log.prox_values[t, i]],
                prox_comm=[float(v) for v in log.prox_comm[t, i]],
                rx_left=float(log.rx_left[t, i]),
                rx_right=float(log.rx_right[t, i]),
                motor_target=float(log.speeds[t, i]),
                tx_message=float(log.tx[t, i]),
                colour=int(log.colours[t + 1, i]),
                goal_x=float(log.goals[i]),
                n_agents=n,
                avg_gap=float(log.avg_gap),
            ))
    return out


def generate_dataset(cfg: GenConfig) -> list[RunRecord]:
    records: list[RunRecord] = []
    for run_id in range(cfg.n_runs):
        records += log_to_records(simulate_run(cfg, run_id), run_id)
    return records


# --- codec ------------------------------------------------------------------------


def encode_records(records: Iterable[RunRecord]) -> bytes:
    lines = [json.dumps(dataclasses.asdict(r), separators=(",", ":")) for r in records]
    return "".join(line + "\n" for line in lines).encode("utf-8")


def _record_from_obj(obj, lineno: int) -> RunRecord:
    if not isinstance(obj, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    missing = [k for k in RECORD_FIELDS if k not in obj]
    if missing:
        raise DatasetError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    extra = sorted(set(obj) - set(RECORD_FIELDS))
    if extra:
        raise DatasetError(f"line {lineno}: unknown field(s) {', '.join(extra)}")
    try:
        kw = {}
        for k in RECORD_FIELDS:
            v = obj[k]
            if k in _VEC_FIELDS:
                if not isinstance(v, list) or len(v) != 7:
                    raise DatasetError(f"line {lineno}: {k} must be a list of 7 numbers")
                kw[k] = [float(x) for x in v]
            elif k in _INT_FIELDS:
                kw[k] = int(v)
            else:
                kw[k] = float(v)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"line {lineno}: {exc}") from exc
    return RunRecord(**kw)


def decode_records(data: bytes) -> list[RunRecord]:
    out = []
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: {exc.msg}") from exc
        out.append(_record_from_obj(obj, lineno))
    return out


def meta_path(path) -> Path:
    path = Path(path)
    name = path.name[: -len(".jsonl")] if path.name.endswith(".jsonl") else path.stem
    return path.with_name(name + ".meta.json")


def write_dataset(path, records: list[RunRecord], cfg: Optional[GenConfig] = None) -> dict:
    """Write the .jsonl file and its .meta.json sidecar; returns the metadata."""
    path = Path(path)
    data = encode_records(records)
    path.write_bytes(data)
    meta = {
        "n_runs": len({r.run_id for r in records}) if cfg is None else cfg.n_runs,
        "n_records": len(records),
        "seed": None if cfg is None else cfg.seed,
        "controller": None if cfg is None else cfg.controller,
        "config": None if cfg is None else cfg.to_dict(),
        "content_hash": "sha256:" + hashlib.sha256(data).hexdigest(),
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def read_dataset(path) -> list[RunRecord]:
    return decode_records(Path(path).read_bytes())


def group_runs(records: Iterable[RunRecord]) -> dict[int, list[RunRecord]]:
    runs: dict[int, list[RunRecord]] = {}
    for r in records:
        runs.setdefault(r.run_id, []).append(r)
    for recs in runs.values():
        recs.sort(key=lambda r: (r.step, r.agent_id))
    return dict(sorted(runs.items()))


# --- splits -------------------------------------------------------------------------


@dataclass
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


def shuffle_split(run_ids, spec: SplitSpec = SplitSpec()) -> tuple[list[int], list[int], list[int]]:
    """Whole-run partition into train/validation/test."""
    if run_ids and isinstance(next(iter(run_ids)), RunRecord):
        run_ids = {r.run_id for r in run_ids}
    ids = sorted(set(int(r) for r in run_ids))
    n = len(ids)
    if n < 5:
        raise DatasetError(f"need at least 5 runs to split, got {n}")
    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [ids[k] for k in order]
    n_train = int(np.floor(spec.train_frac * n))
    n_val = int(np.floor(spec.val_frac * n))
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


# --- training views -----------------------------------------------------------------


def _sensing(rec: RunRecord, kind) -> list:
    if kind.variant == "prox_values":
        return rec.prox_values
    if kind.variant == "prox_comm":
        return rec.prox_comm
    return rec.prox_values + rec.prox_comm


def record_pairs(records: Iterable[RunRecord], kind="prox_values") -> tuple[np.ndarray, np.ndarray]:
    """Per-record (network input, motor target) pairs for the moving robots."""
    kind = input_kind(kind)
    xs, ys = [], []
    for r in records:
        if r.agent_id == 0 or r.agent_id == r.n_agents - 1:
            continue
        xs.append(_sensing(r, kind))
        ys.append(r.motor_target)
    if not xs:
        return np.zeros((0, kind.width)), np.zeros(0)
    return network_input(np.array(xs)), np.array(ys, dtype=float)


def run_arrays(records: list[RunRecord], pipeline: str, kind="all_sensors"):
    """(inputs (T, N, w), targets (T, N), mask (N,), speaks (N,)) for one run."""
    steps = sorted({r.step for r in records})
    n = records[0].n_agents
    index = {s: k for k, s in enumerate(steps)}
    if pipeline == "colour":
        width = 0
    else:
        kind = input_kind(kind)
        width = kind.width
    inputs = np.zeros((len(steps), n, width))
    targets = np.zeros((len(steps), n))
    truth = ground_truth_colours(n)
    for r in records:
        t = index[r.step]
        if pipeline == "colour":
            targets[t, r.agent_id] = truth[r.agent_id]
        else:
            inputs[t, r.agent_id] = network_input(_sensing(r, kind))
            targets[t, r.agent_id] = r.motor_target
    if pipeline == "colour":
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.ones(n, dtype=bool)
        mask[[0, -1]] = False
    return inputs, targets, mask, mask.copy()


def build_sequences(records: list[RunRecord], pipeline: str = "comm", kind="all_sensors",
                    seq_len: int = 2, stride: int = 1) -> SequenceBatch:
    """Stride-``stride`` windows of ``seq_len`` consecutive steps of one run.

    For the spacing pipeline the end robots are silent and excluded from the
    loss; for colouring every robot speaks and is scored.
    """
    if not records:
        raise DatasetError("no records")
    if len({r.run_id for r in records}) != 1:
        raise DatasetError("build_sequences expects the records of a single run")
    inputs, targets, mask, speaks = run_arrays(records, pipeline, kind)
    T, n, w = inputs.shape
    starts = list(range(0, T - seq_len + 1, stride)) if T >= seq_len else []
    b = len(starts)
    x = np.zeros((b, seq_len, n, w))
    y = np.zeros((b, seq_len, n))
    for k, s in enumerate(starts):
        x[k] = inputs[s:s + seq_len]
        y[k] = targets[s:s + seq_len]
    rid = np.full(b, records[0].run_id)
    return SequenceBatch(x, y, np.tile(mask, (b, 1)), np.tile(speaks, (b, 1)), rid)


def pad_to_max(batch: SequenceBatch, n_max: int = 10) -> SequenceBatch:
    b, t, n, w = batch.inputs.shape
    if n > n_max:
        raise DatasetError(f"{n} agents exceed the padding size {n_max}")
    if n == n_max:
        return batch
    pad = n_max - n
    return SequenceBatch(
        np.concatenate([batch.inputs, np.zeros((b, t, pad, w))], axis=2),
        np.concatenate([batch.targets, np.zeros((b, t, pad))], axis=2),
        np.concatenate([batch.mask, np.zeros((b, pad), bool)], axis=1),
        np.concatenate([batch.speaks, np.zeros((b, pad), bool)], axis=1),
        batch.run_ids,
    )


def concat_batches(batches: list[SequenceBatch]) -> SequenceBatch:
    batches = [b for b in batches if len(b)]
    if not batches:
        raise DatasetError("empty split")
    rid = None
    if all(b.run_ids is not None for b in batches):
        rid = np.concatenate([b.run_ids for b in batches])
    return SequenceBatch(
        np.concatenate([b.inputs for b in batches]),
        np.concatenate([b.targets for b in batches]),
        np.concatenate([b.mask for b in batches]),
        np.concatenate([b.speaks for b in batches]),
        rid,
    )


def sequences_for_runs(runs: dict[int, list[RunRecord]], run_ids, pipeline: str, kind="all_sensors",
                       n_max: Optional[int] = None) -> SequenceBatch:
    """All padded sequences of the selected runs stacked into one batch."""
    run_ids = list(run_ids)
    if n_max is None:
        n_max = max([10] + [runs[r][0].n_agents for r in run_ids if runs[r]])
    parts = [pad_to_max(build_sequences(runs[r], pipeline, kind), n_max) for r in run_ids if runs.get(r)]
    return concat_batches(parts)
