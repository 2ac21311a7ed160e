"""Expert, manual and learned controllers.

Each decision function is pure. The ``*Controller`` classes adapt them to a
whole row so that :func:`robotrow.episode.run_episode` can drive any of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .sensing import FRONT, INTENSITY_MAX, REAR, SensorFrame
from .world import BLUE, RED, ConfigError, WorldState, ground_truth_colours

MAX_SPEED = 16.6
EXPERT_GAIN = 10.0
P_GAIN = 5.0


@dataclass(frozen=True)
class InputKind:
    variant: str
    width: int

    @property
    def front(self) -> list[int]:
        if self.variant == "all_sensors":
            return list(FRONT) + [7 + k for k in FRONT]
        return list(FRONT)

    @property
    def rear(self) -> list[int]:
        if self.variant == "all_sensors":
            return list(REAR) + [7 + k for k in REAR]
        return list(REAR)


INPUT_KINDS = {
    "prox_values": InputKind("prox_values", 7),
    "prox_comm": InputKind("prox_comm", 7),
    "all_sensors": InputKind("all_sensors", 14),
}


def input_kind(kind) -> InputKind:
    if isinstance(kind, InputKind):
        return kind
    try:
        return INPUT_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown input kind {kind!r}; choose from {', '.join(INPUT_KINDS)}") from None


def network_input(sensing) -> np.ndarray:
    """Raw intensities scaled to [0, 1] before they reach a network."""
    return np.asarray(sensing, dtype=float) / INTENSITY_MAX


@dataclass
class ControlDecision:
    speed: float
    tx_message: float = 0.0


@dataclass
class ColourDecision:
    colour_prob_blue: float
    colour: int
    tx_message: float


def _clamp(v: float, limit: float = MAX_SPEED) -> float:
    return float(min(max(v, -limit), limit))


def expert_velocity(pose, goal: float, gain: float = EXPERT_GAIN, max_speed: float = MAX_SPEED) -> float:
    """Signed distance to the goal times the gain, saturated at the motor limit."""
    x = pose.x if hasattr(pose, "x") else float(pose)
    return _clamp(gain * (goal - x), max_speed)


def manual_p_velocity(frame: SensorFrame, kind, gain: float = P_GAIN, max_speed: float = MAX_SPEED) -> float:
    kind = input_kind(kind)
    values = frame.view(kind.variant)
    front = max(values[k] for k in kind.front)
    rear = max(values[k] for k in kind.rear)
    error = (rear - front) / INTENSITY_MAX
    return _clamp(gain * error * max_speed, max_speed)


def manual_colour_step(c_left: int, c_right: int, n_agents: int) -> tuple[int, int]:
    """Hand-written counting protocol: returns (message, colour); 0 means nothing received."""
    half = n_agents // 2
    if n_agents % 2 == 1:
        if c_left == 0:
            if c_right > half:
                return c_right - 1, BLUE
            if c_right == half:
                return c_right + 1, BLUE
            return c_right + 1, RED
        if c_right == 0:
            if c_left > half:
                return c_left - 1, RED
            if c_left == half:
                return c_left + 1, BLUE
            return c_left + 1, BLUE
        if c_left > c_right:
            return c_right + 1, RED
        return c_left + 1, BLUE
    if c_left == 0:
        if c_right > half:
            # ambiguous: c_right - 1 would also do
            return c_right, BLUE
        return c_right + 1, RED
    if c_right == 0:
        if c_left < half:
            return c_left + 1, BLUE
        return c_left, RED
    if c_left > c_right:
        return c_right + 1, RED
    if c_left < c_right:
        return c_left + 1, BLUE
    return c_left, RED


def _check_width(model: nn.MlpParams, width: int, arch: str) -> None:
    if model.arch != arch:
        raise ConfigError(f"expected a {arch} model, got {model.arch}")
    if model.input_width != width:
        raise ConfigError(f"model input width {model.input_width} != {width}")


def learned_distributed(frame: SensorFrame, kind, model: nn.MlpParams) -> ControlDecision:
    kind = input_kind(kind)
    _check_width(model, kind.width, "distributed")
    out, _ = nn.forward(model, network_input(frame.view(kind.variant)))
    return ControlDecision(_clamp(out[0]), 0.0)


def learned_comm(frame: SensorFrame, rx_left: float, rx_right: float, kind, model: nn.MlpParams) -> ControlDecision:
    kind = input_kind(kind)
    _check_width(model, kind.width + 2, "single_comm")
    x = np.concatenate([network_input(frame.view(kind.variant)), [rx_left, rx_right]])
    out, _ = nn.forward(model, x)
    return ControlDecision(_clamp(out[0]), float(out[1]))


def learned_colour(rx_left: float, rx_right: float, model: nn.MlpParams) -> ColourDecision:
    _check_width(model, 2, "colour")
    out, _ = nn.forward(model, [rx_left, rx_right])
    prob = float(out[0])
    return ColourDecision(prob, BLUE if prob >= 0.5 else RED, float(out[1]))


# --- row-level adapters ---------------------------------------------------------


@dataclass
class Decisions:
    speeds: np.ndarray
    tx: np.ndarray
    colours: np.ndarray
    colour_probs: Optional[np.ndarray] = None


class Controller:
    name = "base"
    task = 1  # 1: spacing (stops at convergence), 2: colouring (runs the full horizon)

    def initial_messages(self, world: WorldState, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(world.n_agents)

    def decide(self, world: WorldState, frames: list[SensorFrame]) -> Decisions:
        raise NotImplementedError

    def _hold(self, world):
        n = world.n_agents
        return np.zeros(n), np.zeros(n), world.colours.copy()


class ZeroController(Controller):
    name = "zero"

    def decide(self, world, frames):
        return Decisions(*self._hold(world))


class ExpertController(Controller):
    """Omniscient: knows every goal, colours everyone correctly at once."""

    name = "expert"

    def decide(self, world, frames):
        speeds = np.array([
            0.0 if a.is_dead else expert_velocity(a.pose, g, max_speed=world.config.max_speed)
            for a, g in zip(world.agents, world.goals)
        ])
        return Decisions(speeds, np.zeros(world.n_agents), ground_truth_colours(world.n_agents))


class ManualController(Controller):
    name = "manual"

    def __init__(self, kind="prox_values"):
        self.kind = input_kind(kind)

    def decide(self, world, frames):
        speeds, tx, colours = self._hold(world)
        for i, a in enumerate(world.agents):
            if not a.is_dead:
                speeds[i] = manual_p_velocity(frames[i], self.kind, max_speed=world.config.max_speed)
        return Decisions(speeds, tx, colours)


class ManualColourController(Controller):
    """Counting protocol driven from both ends of the row.

    The end robots anchor the count: they always send 1 and show their end's
    colour. A middle robot that has heard nothing yet stays silent and keeps
    its colour; everyone else applies :func:`manual_colour_step`.
    """

    name = "manual-colour"
    task = 2

    def decide(self, world, frames):
        n = world.n_agents
        speeds, tx, colours = self._hold(world)
        for i in range(n):
            if i == 0 or i == n - 1:
                tx[i] = 1
                colours[i] = BLUE if i == 0 else RED
                continue
            c_left, c_right = int(round(frames[i].rx_left)), int(round(frames[i].rx_right))
            if c_left == 0 and c_right == 0:
                continue
            tx[i], colours[i] = manual_colour_step(c_left, c_right, n)
        return Decisions(speeds, tx, colours)


class DistributedNetController(Controller):
    name = "net-distributed"

    def __init__(self, model: nn.MlpParams, kind="prox_values"):
        self.kind = input_kind(kind)
        _check_width(model, self.kind.width, "distributed")
        self.model = model

    def decide(self, world, frames):
        speeds, tx, colours = self._hold(world)
        movers = [i for i, a in enumerate(world.agents) if not a.is_dead]
        if movers:
            x = np.stack([network_input(frames[i].view(self.kind.variant)) for i in movers])
            out, _ = nn.forward(self.model, x)
            speeds[movers] = np.clip(out[:, 0], -MAX_SPEED, MAX_SPEED)
        return Decisions(speeds, tx, colours)


class CommNetController(Controller):
    """Learned speed plus learned message; the end robots stay silent."""

    name = "net-comm"

    def __init__(self, model: nn.MlpParams, kind="all_sensors"):
        self.kind = input_kind(kind)
        _check_width(model, self.kind.width + 2, "single_comm")
        self.model = model

    def initial_messages(self, world, rng):
        msgs = rng.uniform(0.0, 1.0, size=world.n_agents)
        msgs[~world.movers] = 0.0
        return msgs

    def decide(self, world, frames):
        speeds, tx, colours = self._hold(world)
        movers = [i for i, a in enumerate(world.agents) if not a.is_dead]
        if movers:
            x = np.stack([
                np.concatenate([network_input(frames[i].view(self.kind.variant)), [frames[i].rx_left, frames[i].rx_right]])
                for i in movers
            ])
            out, _ = nn.forward(self.model, x)
            speeds[movers] = np.clip(out[:, 0], -MAX_SPEED, MAX_SPEED)
            tx[movers] = out[:, 1]
        return Decisions(speeds, tx, colours)


class ColourNetController(Controller):
    name = "net-colour"
    task = 2

    def __init__(self, model: nn.MlpParams):
        _check_width(model, 2, "colour")
        self.model = model

    def initial_messages(self, world, rng):
        return rng.uniform(0.0, 1.0, size=world.n_agents)

    def decide(self, world, frames):
        x = np.array([[f.rx_left, f.rx_right] for f in frames])
        out, _ = nn.forward(self.model, x)
        probs = out[:, 0]
        colours = np.where(probs >= 0.5, BLUE, RED)
        return Decisions(np.zeros(world.n_agents), out[:, 1].copy(), colours, probs.copy())


CONTROLLER_NAMES = ("expert", "manual", "manual-colour", "net-distributed", "net-comm", "net-colour")
_NET_ARCH = {"net-distributed": "distributed", "net-comm": "single_comm", "net-colour": "colour"}


def make_controller(name: str, model: Optional[nn.MlpParams] = None, kind="prox_values") -> Controller:
    if name == "expert":
        return ExpertController()
    if name == "manual":
        return ManualController(kind)
    if name == "manual-colour":
        return ManualColourController()
    if name == "zero":
        return ZeroController()
    if name in _NET_ARCH:
        if model is None:
            raise ConfigError(f"controller {name} needs a model checkpoint")
        if model.arch != _NET_ARCH[name]:
            raise ConfigError(f"controller {name} needs a {_NET_ARCH[name]} model, got {model.arch}")
        if name == "net-distributed":
            return DistributedNetController(model, kind)
        if name == "net-comm":
            return CommNetController(model, kind)
        return ColourNetController(model)
    raise ConfigError(f"unknown controller {name!r}; choose from {', '.join(CONTROLLER_NAMES)}")


def colour_steps_bound(n_agents: int) -> int:
    return math.ceil(n_agents / 2) + 1
