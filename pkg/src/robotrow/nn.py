"""Small dense networks with hand-written backpropagation.

Every network is ``linear -> tanh -> linear -> tanh -> linear`` with hidden
width 10. The three shapes differ only in input width and in which output
channels go through a sigmoid:

* ``distributed``: sensing -> speed
* ``single_comm``: sensing + (left, right) messages -> speed, message
* ``colour``: (left, right) messages -> P(blue), message

Weights are stored as ``(out, in)`` matrices; batches are rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

HIDDEN = 10
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
BCE_CLAMP = 1e-7

ARCHS = ("distributed", "single_comm", "colour")
_SIGMOID_CHANNELS = {
    "distributed": (False,),
    "single_comm": (False, True),
    "colour": (True, True),
}


class ShapeError(ValueError):
    pass


def tanh_eval(x):
    return np.tanh(x)


def sigmoid_eval(x):
    """Logistic function without overflow for large |x|."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass
class MlpParams:
    arch: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ShapeError(f"unknown arch {self.arch!r}")
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ShapeError("expected exactly three layers")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k}: input {w.shape[1]} != previous output {self.weights[k - 1].shape[0]}")
        if self.weights[0].shape[0] != HIDDEN or self.weights[1].shape[0] != HIDDEN:
            raise ShapeError("hidden widths must be 10")
        if self.weights[2].shape[0] != len(_SIGMOID_CHANNELS[self.arch]):
            raise ShapeError(f"{self.arch} needs {len(_SIGMOID_CHANNELS[self.arch])} outputs")
        if self.arch == "colour" and self.input_width != 2:
            raise ShapeError("colour network takes exactly the two received messages")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[2].shape[0]

    @property
    def sigmoid_mask(self) -> np.ndarray:
        return np.array(_SIGMOID_CHANNELS[self.arch])

    def flat(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_flat(cls, arch: str, arrays: list[np.ndarray]) -> "MlpParams":
        return cls(arch, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams.from_flat(self.arch, [a.copy() for a in self.flat()])


def layer_sizes(arch: str, sensing_width: int = 0) -> list[int]:
    if arch == "distributed":
        return [sensing_width, HIDDEN, HIDDEN, 1]
    if arch == "single_comm":
        return [sensing_width + 2, HIDDEN, HIDDEN, 2]
    if arch == "colour":
        return [2, HIDDEN, HIDDEN, 2]
    raise ShapeError(f"unknown arch {arch!r}")


def init_params(arch: str, sensing_width: int = 0, seed=0) -> MlpParams:
    """Fan-in scaled uniform initialisation."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sizes = layer_sizes(arch, sensing_width)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(arch, weights, biases)


def zero_params(arch: str, sensing_width: int = 0) -> MlpParams:
    sizes = layer_sizes(arch, sensing_width)
    return MlpParams(
        arch,
        [np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        [np.zeros(o) for o in sizes[1:]],
    )


@dataclass
class Tape:
    x: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    out: np.ndarray
    squeeze: bool
    hidden: str


def forward(params: MlpParams, x, hidden: str = "tanh") -> tuple[np.ndarray, Tape]:
    """Evaluate the network on one input vector or a batch of rows.

    ``hidden="identity"`` swaps the tanh layers for the identity (test hook).
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != params.input_width:
        raise ShapeError(f"{params.arch} expects input width {params.input_width}, got {x.shape[-1]}")
    act = np.tanh if hidden == "tanh" else (lambda z: z)
    pre, post = [], []
    h = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = act(z) if k < 2 else z
        post.append(h)
    mask = params.sigmoid_mask
    out = pre[-1].copy()
    if mask.any():
        out[:, mask] = sigmoid_eval(out[:, mask])
    tape = Tape(x, pre, post, out, squeeze, hidden)
    return (out[0] if squeeze else out), tape


def backward(params: MlpParams, tape: Tape, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Reverse-mode pass. Returns (flat parameter grads, input grad)."""
    g = np.asarray(upstream, dtype=float)
    if tape.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.out.shape:
        raise ShapeError(f"upstream grad {g.shape} does not match output {tape.out.shape}")
    if tape.x.shape[-1] != params.input_width:
        raise ShapeError("tape was recorded with a different network")
    mask = params.sigmoid_mask
    g = g.copy()
    if mask.any():
        s = tape.out[:, mask]
        g[:, mask] *= s * (1.0 - s)
    grads: list[np.ndarray] = [None] * 6
    for k in (2, 1, 0):
        h_in = tape.x if k == 0 else tape.post[k - 1]
        grads[2 * k] = g.T @ h_in
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.weights[k]
        if k > 0 and tape.hidden == "tanh":
            g = g * (1.0 - tape.post[k - 1] ** 2)
    dx = g[0] if tape.squeeze else g
    return grads, dx


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("loss of an empty input")
    return pred, target


def _weights(mask, shape):
    if mask is None:
        return np.ones(shape)
    w = np.broadcast_to(np.asarray(mask, dtype=float), shape)
    if w.sum() == 0:
        raise ValueError("loss over an all-masked input")
    return w


def mse_loss(pred, target, mask=None) -> tuple[float, np.ndarray]:
    """Mean squared error over the unmasked entries and its gradient w.r.t. ``pred``."""
    pred, target = _check_pair(pred, target)
    w = _weights(mask, pred.shape)
    n = w.sum()
    diff = pred - target
    return float((w * diff**2).sum() / n), 2.0 * w * diff / n


def bce_loss(pred, target, mask=None) -> tuple[float, np.ndarray]:
    pred, target = _check_pair(pred, target)
    w = _weights(mask, pred.shape)
    n = w.sum()
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(w * (target * np.log(p) + (1.0 - target) * np.log1p(-p))).sum() / n
    grad = w * (p - target) / (p * (1.0 - p)) / n
    return float(loss), grad


@dataclass
class AdamState:
    lr: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params: MlpParams, lr: float) -> "AdamState":
        flat = params.flat()
        return cls(lr, [np.zeros_like(a) for a in flat], [np.zeros_like(a) for a in flat])


def adam_step(params: MlpParams, grads: list[np.ndarray], state: AdamState) -> tuple[MlpParams, AdamState]:
    flat = params.flat()
    if len(grads) != len(flat) or any(g.shape != p.shape for g, p in zip(grads, flat)):
        raise ShapeError("gradient shapes do not match parameters")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_flat, new_m, new_v = [], [], []
    for p, g, m, v in zip(flat, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_flat.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(state.lr, new_m, new_v, t, b1, b2, state.eps)
    return MlpParams.from_flat(params.arch, new_flat), new_state


# --- two-step communication unroll ------------------------------------------


@dataclass
class SequenceBatch:
    """Sequences of consecutive steps for every robot of a run.

    Arrays carry a leading batch axis: ``inputs`` is (B, T, N, w), ``targets``
    (B, T, N), ``mask`` and ``speaks`` are (B, N). ``mask`` selects robots that
    contribute to the loss; ``speaks`` selects robots whose message is put on
    the channel (padding and silent robots read as 0 to their neighbours).
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    speaks: np.ndarray
    run_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.speaks = np.asarray(self.speaks, dtype=bool)
        b, t, n, _ = self.inputs.shape
        if self.targets.shape != (b, t, n) or self.mask.shape != (b, n) or self.speaks.shape != (b, n):
            raise ShapeError("inconsistent SequenceBatch shapes")

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_agents(self) -> int:
        return self.inputs.shape[2]

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "SequenceBatch":
        rid = None if self.run_ids is None else self.run_ids[idx]
        return SequenceBatch(self.inputs[idx], self.targets[idx], self.mask[idx], self.speaks[idx], rid)

    @property
    def loss_mask(self) -> np.ndarray:
        return np.broadcast_to(self.mask[:, None, :], self.targets.shape)


def random_init_comm(batch: SequenceBatch, rng: np.random.Generator) -> np.ndarray:
    """Uniform[0, 1] placeholder messages with zero sentinels and silent robots."""
    b, n = batch.speaks.shape
    comm = np.zeros((b, n + 2))
    comm[:, 1:-1] = rng.uniform(0.0, 1.0, size=(b, n)) * batch.speaks
    return comm


@dataclass
class UnrollTape:
    steps: list[Tape] = field(default_factory=list)
    comm: list[np.ndarray] = field(default_factory=list)
    speaks: Optional[np.ndarray] = None
    sensing_width: int = 0


@dataclass
class UnrollResult:
    primary: np.ndarray   # (B, T, N) speed or P(blue)
    messages: np.ndarray  # (B, T, N)
    tape: UnrollTape


def commnet_unroll(params: MlpParams, batch: SequenceBatch, init_comm) -> UnrollResult:
    """Run the shared per-robot network over the sequence.

    At step t robot i sees its sensing plus comm[i] and comm[i+2], the
    messages its left and right neighbours sent at t-1.
    """
    if params.arch not in ("single_comm", "colour"):
        raise ShapeError(f"unroll needs a communicating arch, got {params.arch}")
    b, T, n, w = batch.inputs.shape
    if params.input_width != w + 2:
        raise ShapeError(f"{params.arch} expects sensing width {params.input_width - 2}, batch has {w}")
    comm = np.array(init_comm, dtype=float)
    if comm.ndim == 1:
        comm = np.broadcast_to(comm, (b, n + 2)).copy()
    if comm.shape != (b, n + 2):
        raise ShapeError(f"init_comm must have shape {(b, n + 2)}, got {comm.shape}")
    if np.any(comm[:, 0] != 0) or np.any(comm[:, -1] != 0):
        raise ValueError("init_comm sentinels must be 0")
    speaks = batch.speaks.astype(float)
    tape = UnrollTape(speaks=speaks, sensing_width=w)
    primary = np.empty((b, T, n))
    messages = np.empty((b, T, n))
    for t in range(T):
        x = np.concatenate([batch.inputs[:, t], comm[:, :-2, None], comm[:, 2:, None]], axis=-1)
        out, step_tape = forward(params, x.reshape(b * n, w + 2))
        out = out.reshape(b, n, 2)
        tape.steps.append(step_tape)
        tape.comm.append(comm)
        primary[:, t] = out[..., 0]
        msg = out[..., 1] * speaks
        messages[:, t] = msg
        comm = np.zeros((b, n + 2))
        comm[:, 1:-1] = msg
    return UnrollResult(primary, messages, tape)


def commnet_backward(
    params: MlpParams, tape: UnrollTape, d_primary, d_messages=None, sever_comm: bool = False
) -> list[np.ndarray]:
    """Backpropagation through time over the unroll.

    ``d_primary`` is dL/d(primary output), shape (B, T, N). Message outputs
    receive gradient only through the next step's inputs unless
    ``d_messages`` is given. ``sever_comm`` blocks that path (test hook).
    """
    d_primary = np.asarray(d_primary, dtype=float)
    T = len(tape.steps)
    if T == 0 or d_primary.shape[1] != T:
        raise ShapeError("gradient does not match the recorded unroll")
    b, _, n = d_primary.shape
    w = tape.sensing_width
    grads = [np.zeros_like(a) for a in params.flat()]
    d_msg_next = np.zeros((b, n))
    for t in reversed(range(T)):
        d_out = np.zeros((b, n, 2))
        d_out[..., 0] = d_primary[:, t]
        d_msg = d_msg_next.copy()
        if d_messages is not None:
            d_msg += d_messages[:, t]
        d_out[..., 1] = d_msg * tape.speaks
        g, dx = backward(params, tape.steps[t], d_out.reshape(b * n, 2))
        for k in range(6):
            grads[k] += g[k]
        dx = dx.reshape(b, n, w + 2)
        d_comm = np.zeros((b, n + 2))
        d_comm[:, :-2] += dx[..., w]
        d_comm[:, 2:] += dx[..., w + 1]
        d_msg_next = np.zeros((b, n)) if sever_comm else d_comm[:, 1:-1]
    return grads


def unroll_loss(params: MlpParams, batch: SequenceBatch, init_comm, sever_comm: bool = False):
    """Loss over every unmasked (step, robot) pair and its parameter gradients."""
    res = commnet_unroll(params, batch, init_comm)
    loss_fn = bce_loss if params.arch == "colour" else mse_loss
    loss, d_primary = loss_fn(res.primary, batch.targets, batch.loss_mask)
    grads = commnet_backward(params, res.tape, d_primary, sever_comm=sever_comm)
    return loss, grads, res


# --- checkpoints ----------------------------------------------------------------


def params_to_dict(params: MlpParams) -> dict:
    return {
        "arch": params.arch,
        "input_width": params.input_width,
        "layers": [
            {
                "rows": int(w.shape[0]),
                "cols": int(w.shape[1]),
                "weights": [float(v) for v in w.ravel()],
                "bias": [float(v) for v in b],
            }
            for w, b in zip(params.weights, params.biases)
        ],
    }


def params_from_dict(doc: dict) -> MlpParams:
    try:
        arch = doc["arch"]
        weights, biases = [], []
        for k, layer in enumerate(doc["layers"]):
            rows, cols = int(layer["rows"]), int(layer["cols"])
            data = np.asarray(layer["weights"], dtype=float)
            if data.size != rows * cols:
                raise ShapeError(f"layer {k}: {data.size} weights for a {rows}x{cols} matrix")
            weights.append(data.reshape(rows, cols))
            biases.append(np.asarray(layer["bias"], dtype=float))
    except (KeyError, TypeError) as exc:
        raise ShapeError(f"malformed checkpoint: {exc}") from exc
    params = MlpParams(arch, weights, biases)
    if int(doc.get("input_width", params.input_width)) != params.input_width:
        raise ShapeError("input_width does not match the first layer")
    return params


def save_checkpoint(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)) + "\n")


def load_checkpoint(path, arch: Optional[str] = None) -> MlpParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ShapeError(f"{path}: not a valid checkpoint ({exc})") from exc
    params = params_from_dict(doc)
    if arch is not None and params.arch != arch:
        raise ShapeError(f"{path}: checkpoint is {params.arch!r}, expected {arch!r}")
    return params
