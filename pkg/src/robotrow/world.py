"""One-dimensional robot row: spawning, goals, motion and termination."""

from __future__ import annotations

import copy
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

BLUE = 1
RED = 0

GAP_RANGE = (5.0, 24.0)


class ConfigError(ValueError):
    """Raised for malformed configuration or mismatched inputs."""


@dataclass
class WorldConfig:
    n_agents: int = 5
    avg_gap: Union[float, str] = 8.0
    dt: float = 0.1
    max_speed: float = 16.6
    robot_length: float = 10.9
    wheel_base: float = 9.4
    motor_noise_rel: float = 0.027
    max_steps: int = 40
    goal_tolerance: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_agents < 3:
            raise ConfigError(f"n_agents must be >= 3, got {self.n_agents}")
        if isinstance(self.avg_gap, str):
            if self.avg_gap != "variable":
                raise ConfigError(f"avg_gap must be a number or 'variable', got {self.avg_gap!r}")
        elif not self.avg_gap >= 0:
            raise ConfigError(f"avg_gap must be non-negative, got {self.avg_gap}")
        if not (self.dt > 0 and self.max_speed > 0 and self.robot_length > 0):
            raise ConfigError("dt, max_speed and robot_length must be positive")
        if self.goal_tolerance < 0 or self.motor_noise_rel < 0:
            raise ConfigError("goal_tolerance and motor_noise_rel must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "WorldConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown WorldConfig keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "WorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Pose1D:
    x: float


@dataclass
class AgentState:
    pose: Pose1D
    target_speed: float = 0.0
    colour: int = RED
    tx_message: float = 0.0
    is_dead: bool = False


@dataclass
class WorldState:
    config: WorldConfig
    agents: list[AgentState]
    goals: list[float]
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)
    avg_gap: float = 0.0

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def positions(self) -> np.ndarray:
        return np.array([a.pose.x for a in self.agents], dtype=float)

    @property
    def colours(self) -> np.ndarray:
        return np.array([a.colour for a in self.agents], dtype=int)

    @property
    def movers(self) -> np.ndarray:
        return np.array([not a.is_dead for a in self.agents])

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


def ground_truth_colours(n_agents: int) -> np.ndarray:
    """First ceil(N/2) agents are blue, the rest red; an odd centre is blue."""
    return (np.arange(n_agents) < math.ceil(n_agents / 2)).astype(int)


def _world_from_positions(config, positions, rng, colours=None, avg_gap=0.0) -> WorldState:
    n = len(positions)
    if colours is None:
        colours = np.full(n, RED)
    agents = [
        AgentState(pose=Pose1D(float(x)), colour=int(c), is_dead=(i == 0 or i == n - 1))
        for i, (x, c) in enumerate(zip(positions, colours))
    ]
    world = WorldState(config=config, agents=agents, goals=[], rng=rng, avg_gap=avg_gap)
    world.goals = compute_goals(world)
    return world


def world_from_positions(config: WorldConfig, positions, seed: int = 0, colours=None) -> WorldState:
    """Build a world at explicit positions (probes, tests, replays)."""
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 2:
        raise ConfigError("a world needs at least two robots")
    gaps = np.diff(positions)
    if np.any(gaps < config.robot_length - 1e-9):
        raise ConfigError("robot bodies overlap")
    avg = float(np.mean(gaps) - config.robot_length)
    return _world_from_positions(config, positions, np.random.default_rng(seed), colours, avg)


def spawn_gaps(config: WorldConfig, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    avg_gap = config.avg_gap
    if avg_gap == "variable":
        avg_gap = float(rng.uniform(*GAP_RANGE))
    gaps = rng.uniform(0.0, 2.0 * avg_gap, size=config.n_agents - 1)
    return float(avg_gap), gaps


def positions_from_gaps(gaps, robot_length: float) -> np.ndarray:
    """Cumulative placement: agent 0 at the origin, centres one body length plus gap apart."""
    return np.concatenate([[0.0], np.cumsum(np.asarray(gaps, dtype=float) + robot_length)])


def spawn_world(config: WorldConfig, seed: int) -> WorldState:
    """Random row with agent 0 at x=0 and surface gaps ~ Uniform[0, 2*avg_gap)."""
    rng = np.random.default_rng(seed)
    avg_gap, gaps = spawn_gaps(config, rng)
    positions = positions_from_gaps(gaps, config.robot_length)
    colours = rng.integers(0, 2, size=config.n_agents)
    return _world_from_positions(config, positions, rng, colours, avg_gap)


def compute_goals(world: WorldState) -> list[float]:
    x = world.positions
    n = len(x)
    x0, xn = x[0], x[-1]
    return [float(x0 + i * (xn - x0) / (n - 1)) for i in range(n)]


def _resolve_collisions(x: np.ndarray, dead: np.ndarray, length: float) -> np.ndarray:
    # Gauss-Seidel projection; dead agents never move.
    n = len(x)
    for _ in range(4 * n * n + 10):
        moved = False
        for i in range(n - 1):
            overlap = length - (x[i + 1] - x[i])
            if overlap <= 1e-9:
                continue
            moved = True
            if dead[i] and dead[i + 1]:
                raise ConfigError("fixed robots overlap")
            if dead[i]:
                x[i + 1] = x[i] + length
            elif dead[i + 1]:
                x[i] = x[i + 1] - length
            else:
                mid = 0.5 * (x[i] + x[i + 1])
                x[i] = mid - 0.5 * length
                x[i + 1] = x[i] + length
        if not moved:
            break
    return x


def step_world(world: WorldState, speeds) -> WorldState:
    """Advance one control step in place and return the world."""
    cfg = world.config
    speeds = np.asarray(speeds, dtype=float)
    if speeds.shape != (world.n_agents,):
        raise ConfigError(f"expected {world.n_agents} speeds, got shape {speeds.shape}")
    dead = ~world.movers
    v = np.clip(speeds, -cfg.max_speed, cfg.max_speed)
    v[dead] = 0.0
    if cfg.motor_noise_rel > 0:
        eps = world.rng.normal(0.0, cfg.motor_noise_rel, size=world.n_agents)
        v_noisy = v * (1.0 + eps)
    else:
        v_noisy = v
    x = world.positions + v_noisy * cfg.dt
    x = _resolve_collisions(x, dead, cfg.robot_length)
    for agent, xi, vi in zip(world.agents, x, v):
        agent.pose.x = float(xi)
        agent.target_speed = float(vi)
    world.step += 1
    return world


def is_converged(world: WorldState) -> bool:
    tol = world.config.goal_tolerance
    return all(
        abs(a.pose.x - g) <= tol for a, g in zip(world.agents, world.goals) if not a.is_dead
    )


def goal_errors(world: WorldState) -> np.ndarray:
    return np.abs(world.positions - np.asarray(world.goals))
