"""Closed-loop simulation: sense, receive, decide, transmit, move."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controllers import Controller
from .sensing import sense_all
from .world import ConfigError, WorldState, goal_errors, is_converged, step_world


@dataclass
class RunLog:
    """Per-step, per-robot trace of one episode.

    ``positions`` and ``colours`` have one more row than the decision arrays:
    row 0 is the spawn state and row t+1 the state after decision t.
    """

    controller: str
    goals: np.ndarray
    positions: np.ndarray
    colours: np.ndarray
    speeds: np.ndarray
    tx: np.ndarray
    rx_left: np.ndarray
    rx_right: np.ndarray
    prox_values: np.ndarray
    prox_comm: np.ndarray
    colour_probs: Optional[np.ndarray]
    converged: bool
    avg_gap: float = 0.0

    @property
    def steps(self) -> int:
        return self.speeds.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def errors(self) -> np.ndarray:
        """|x - goal| for every recorded state, shape (steps + 1, N)."""
        return np.abs(self.positions - self.goals[None, :])


def run_episode(world: WorldState, controller: Controller, horizon: Optional[int] = None) -> RunLog:
    """Simulate until convergence (spacing controllers) or ``horizon`` steps.

    The world is advanced in place.
    """
    if horizon is None:
        horizon = world.config.max_steps
    if horizon < 0:
        raise ConfigError("horizon must be non-negative")
    n = world.n_agents
    tx = np.asarray(controller.initial_messages(world, world.rng), dtype=float)
    positions = [world.positions]
    colours = [world.colours]
    rows = {k: [] for k in ("speeds", "tx", "rx_left", "rx_right", "prox_values", "prox_comm", "probs")}
    converged = is_converged(world)
    for _ in range(horizon):
        if controller.task == 1 and converged:
            break
        frames = sense_all(world, tx)
        d = controller.decide(world, frames)
        rows["prox_values"].append(np.stack([f.prox_values for f in frames]))
        rows["prox_comm"].append(np.stack([f.prox_comm for f in frames]))
        rows["rx_left"].append(np.array([f.rx_left for f in frames]))
        rows["rx_right"].append(np.array([f.rx_right for f in frames]))
        tx = np.asarray(d.tx, dtype=float)
        for agent, c, m in zip(world.agents, d.colours, tx):
            agent.colour = int(c)
            agent.tx_message = float(m)
        step_world(world, d.speeds)
        rows["speeds"].append(np.array([a.target_speed for a in world.agents]))
        rows["tx"].append(tx)
        if d.colour_probs is not None:
            rows["probs"].append(np.asarray(d.colour_probs, dtype=float))
        positions.append(world.positions)
        colours.append(world.colours)
        converged = is_converged(world)

    def stack(key, width=None):
        if rows[key]:
            return np.stack(rows[key])
        return np.zeros((0, n) if width is None else (0, n, width))

    return RunLog(
        controller=controller.name,
        goals=np.asarray(world.goals, dtype=float),
        positions=np.stack(positions),
        colours=np.stack(colours),
        speeds=stack("speeds"),
        tx=stack("tx"),
        rx_left=stack("rx_left"),
        rx_right=stack("rx_right"),
        prox_values=stack("prox_values", 7),
        prox_comm=stack("prox_comm", 7),
        colour_probs=stack("probs") if rows["probs"] else None,
        converged=bool(converged),
        avg_gap=world.avg_gap,
    )


def final_errors(log: RunLog) -> np.ndarray:
    return log.errors[-1]


__all__ = ["RunLog", "run_episode", "final_errors", "goal_errors"]
