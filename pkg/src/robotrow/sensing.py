"""Proximity sensing, proximity-communication events and the combined sensor view.

Sensor order is ``[fll, fl, fc, fr, frr, bl, br]``. On a line only the centre
front sensor sees the robot ahead; both rear sensors see the robot behind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import WorldState

PROX_RANGE = 14.0
COMM_RANGE = 48.0
INTENSITY_MAX = 4505.0

SENSOR_NAMES = ("fll", "fl", "fc", "fr", "frr", "bl", "br")
FRONT = (0, 1, 2, 3, 4)
REAR = (5, 6)
FC, BL, BR = 2, 5, 6


@dataclass(frozen=True)
class SensorModel:
    prox_range: float = PROX_RANGE
    comm_range: float = COMM_RANGE
    intensity_max: float = INTENSITY_MAX

    def __post_init__(self):
        if not self.prox_range < self.comm_range:
            raise ValueError("prox_range must be shorter than comm_range")
        if self.intensity_max <= 0:
            raise ValueError("intensity_max must be positive")


DEFAULT_SENSORS = SensorModel()


@dataclass
class CommEvent:
    rx_payload: float
    intensities: np.ndarray
    side: str | None = None  # "front" or "rear"; inferred from intensities when absent


@dataclass
class SensorFrame:
    prox_values: np.ndarray
    prox_comm: np.ndarray
    rx_left: float = 0.0
    rx_right: float = 0.0
    all_sensors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.prox_values = np.asarray(self.prox_values, dtype=float)
        self.prox_comm = np.asarray(self.prox_comm, dtype=float)
        self.all_sensors = np.concatenate([self.prox_values, self.prox_comm])

    def view(self, kind: str) -> np.ndarray:
        return getattr(self, kind)


def intensity(distance: float, range_: float, intensity_max: float = INTENSITY_MAX) -> float:
    """Linear falloff from ``intensity_max`` at contact to 0 at ``range_``."""
    if distance < 0:
        raise ValueError(f"surface distance must be non-negative, got {distance}")
    return float(np.clip(intensity_max * (1.0 - distance / range_), 0.0, intensity_max))


def surface_gaps(world: WorldState) -> np.ndarray:
    """Surface-to-surface gaps between consecutive robots (length N-1)."""
    # tiny negative values come from the collision tolerance
    return np.maximum(np.diff(world.positions) - world.config.robot_length, 0.0)


def read_prox_values(world: WorldState, agent_index: int, model: SensorModel = DEFAULT_SENSORS) -> np.ndarray:
    n = world.n_agents
    if not 0 <= agent_index < n:
        raise IndexError(agent_index)
    gaps = surface_gaps(world)
    out = np.zeros(7)
    if agent_index < n - 1:
        out[FC] = intensity(gaps[agent_index], model.prox_range, model.intensity_max)
    if agent_index > 0:
        out[BL] = out[BR] = intensity(gaps[agent_index - 1], model.prox_range, model.intensity_max)
    return out


def exchange_comm(world: WorldState, tx, model: SensorModel = DEFAULT_SENSORS) -> list[list[CommEvent]]:
    """Deliver each robot's payload to its in-range neighbours, synchronously."""
    n = world.n_agents
    tx = np.asarray(tx, dtype=float)
    if tx.shape != (n,):
        raise ValueError(f"expected {n} payloads, got shape {tx.shape}")
    gaps = surface_gaps(world)
    events: list[list[CommEvent]] = [[] for _ in range(n)]
    for i in range(n - 1):
        if gaps[i] > model.comm_range:
            continue
        value = intensity(gaps[i], model.comm_range, model.intensity_max)
        # robot i sees robot i+1 ahead of it
        front = np.zeros(7)
        front[FC] = value
        events[i].append(CommEvent(float(tx[i + 1]), front, "front"))
        rear = np.zeros(7)
        rear[BL] = rear[BR] = value
        events[i + 1].append(CommEvent(float(tx[i]), rear, "rear"))
    return events


def flatten_events(events: list[CommEvent]) -> tuple[np.ndarray, float, float]:
    """Element-wise max intensity plus the payloads heard from behind and ahead."""
    prox_comm = np.zeros(7)
    rx_left = rx_right = 0.0
    for ev in events:
        inten = np.asarray(ev.intensities, dtype=float)
        prox_comm = np.maximum(prox_comm, inten)
        side = ev.side
        if side is None:
            side = "rear" if (inten[BL] > 0 or inten[BR] > 0) else "front"
        if side == "rear":
            rx_left = ev.rx_payload
        else:
            rx_right = ev.rx_payload
    return prox_comm, rx_left, rx_right


def build_frame(prox_values, flattened) -> SensorFrame:
    prox_comm, rx_left, rx_right = flattened
    return SensorFrame(prox_values, prox_comm, float(rx_left), float(rx_right))


def sense_all(world: WorldState, tx, model: SensorModel = DEFAULT_SENSORS) -> list[SensorFrame]:
    """Frames for every robot given the payloads transmitted on the previous step."""
    events = exchange_comm(world, tx, model)
    return [
        build_frame(read_prox_values(world, i, model), flatten_events(events[i]))
        for i in range(world.n_agents)
    ]
