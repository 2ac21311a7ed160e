"""Acceptance criteria 1-8, each at its stated tolerance.

Every test prints one ``[criterion k] PASS|FAIL`` line. Run just this file with
``pytest tests/test_acceptance.py -v``.
"""

import itertools
import math
import time

import numpy as np
import pytest

from robotrow import nn
from robotrow.cli import main
from robotrow.controllers import (
    CommNetController,
    DistributedNetController,
    ExpertController,
    ManualColourController,
    colour_steps_bound,
)
from robotrow.dataset import GenConfig, generate_dataset, group_runs
from robotrow.episode import run_episode
from robotrow.evaluation import colour_scores, probe_sensing, r2_score, roc_auc, run_many, wrong_colour_rate
from robotrow.training import TrainConfig, train_colour, train_comm, train_distributed
from robotrow.world import WorldConfig, ground_truth_colours, spawn_world, world_from_positions

HELD_OUT_SEED = 12345  # evaluation spawns never coincide with training spawns (seed 1)


def final_median(logs):
    return float(np.median(np.concatenate([log.errors[-1][1:-1] for log in logs])))


def held_out(controller, avg_gap):
    return run_many(controller, 5, 50, HELD_OUT_SEED, avg_gap, horizon=40)


# 1 ------------------------------------------------------------------------------------------


def test_criterion_1_expert_exactness(report):
    start = time.perf_counter()
    worst_err, late = 0.0, 0
    for seed in range(100):
        n = int(np.random.default_rng([seed, 1]).integers(5, 11))
        cfg = WorldConfig(n_agents=n, avg_gap="variable", motor_noise_rel=0.0, goal_tolerance=1e-9)
        world = spawn_world(cfg, seed)
        bound = math.ceil(np.max(np.abs(world.positions - world.goals)) / 1.66)
        log = run_episode(world, ExpertController(), horizon=bound)
        worst_err = max(worst_err, float(np.max(log.errors[-1])))
        late += not log.converged
    elapsed = time.perf_counter() - start
    ok = worst_err <= 1e-9 and late == 0 and elapsed < 5.0
    report(1, "expert exactness", ok,
           f"max final error {worst_err:.3g} cm (round-off floor 1e-9), {late} runs over the step bound, {elapsed:.2f} s")
    assert ok


# 2 ------------------------------------------------------------------------------------------


def colouring_ok(n, colours, positions):
    cfg = WorldConfig(n_agents=n, motor_noise_rel=0.0)
    world = world_from_positions(cfg, positions, colours=colours)
    log = run_episode(world, ManualColourController(), horizon=2 * n + 2)
    return bool((log.colours[colour_steps_bound(n):] == ground_truth_colours(n)).all())


def test_criterion_2_manual_colouring(report):
    rng = np.random.default_rng(2)
    failures, checked = [], 0
    for n in range(5, 13):
        positions = spawn_world(WorldConfig(n_agents=n, avg_gap="variable"), [2, n]).positions
        if n <= 8:
            colourings = list(itertools.product((0, 1), repeat=n))
        else:
            colourings = [rng.integers(0, 2, size=n) for _ in range(50)]
        for colours in colourings:
            checked += 1
            if not colouring_ok(n, colours, positions):
                failures.append((n, tuple(int(c) for c in colours)))
    ok = not failures
    report(2, "manual colouring convergence", ok,
           f"{checked} initial colourings for N=5..12 (exhaustive N<=8), {len(failures)} miss the ceil(N/2)+1 bound")
    assert ok, failures[:5]


# 3 ------------------------------------------------------------------------------------------


def central_fd(loss, flat, h=1e-5):
    grads = []
    for arr in flat:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = loss(flat)
            arr[idx] = keep - h
            down = loss(flat)
            arr[idx] = keep
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return float(np.max(np.abs(a - b) / np.maximum(1e-7, np.abs(a) + np.abs(b))))


def distributed_instance(rng, width):
    p = nn.init_params("distributed", width, seed=int(rng.integers(1 << 30)))
    x = rng.uniform(0, 1, size=(5, width))
    y = rng.normal(size=5)

    def loss(params):
        out, tape = nn.forward(params, x)
        value, g = nn.mse_loss(out[:, 0], y)
        return value, nn.backward(params, tape, g[:, None])[0]

    return p, loss


def unrolled_instance(rng, arch, width):
    p = nn.init_params(arch, width, seed=int(rng.integers(1 << 30)))
    b, n = 2, int(rng.integers(3, 6))
    targets = rng.integers(0, 2, size=(b, 2, n)).astype(float) if arch == "colour" else rng.normal(size=(b, 2, n))
    batch = nn.SequenceBatch(rng.uniform(0, 1, size=(b, 2, n, width)), targets,
                             rng.uniform(size=(b, n)) > 0.2, rng.uniform(size=(b, n)) > 0.2)
    init = nn.random_init_comm(batch, rng)

    def loss(params):
        value, grads, _ = nn.unroll_loss(params, batch, init)
        return value, grads

    return p, loss


def test_criterion_3_gradient_correctness(report):
    rng = np.random.default_rng(3)
    makers = [
        lambda: distributed_instance(rng, 7),
        lambda: distributed_instance(rng, 14),
        lambda: unrolled_instance(rng, "single_comm", 14),
        lambda: unrolled_instance(rng, "colour", 0),
    ]
    start = time.perf_counter()
    worst = 0.0
    for k in range(100):
        params, loss = makers[k % 4]()
        analytic = loss(params)[1]
        numeric = central_fd(lambda flat: loss(nn.MlpParams.from_flat(params.arch, flat))[0], params.flat())
        worst = max(worst, rel_err(analytic, numeric))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30.0
    report(3, "gradient correctness", ok, f"max relative error {worst:.3g} over 100 instances, {elapsed:.1f} s")
    assert ok


# 4 ------------------------------------------------------------------------------------------


def test_criterion_4_colour_auc(report):
    start = time.perf_counter()
    records = generate_dataset(GenConfig(controller="manual-colour", n_runs=200, n_agents=5, avg_gap="variable", seed=1))
    result = train_colour(TrainConfig("colour", seed=1), records)
    runs = group_runs(records)
    test = [r for i in result.split[2] for r in runs[i]]
    scores, labels = colour_scores(test, result.params, seed=HELD_OUT_SEED)
    auc = roc_auc(scores, labels).auc
    elapsed = time.perf_counter() - start
    ok = auc >= 0.95 and elapsed < 600
    report(4, "colour-network AUC", ok, f"held-out AUC {auc:.4f} on {len(labels)} robot-steps, {elapsed:.1f} s")
    assert ok


# 5 ------------------------------------------------------------------------------------------


def test_criterion_5_distributed_progress(report):
    start = time.perf_counter()
    records = generate_dataset(GenConfig(n_runs=100, n_agents=5, avg_gap=8.0, seed=1))
    result = train_distributed(TrainConfig("distributed", input_kind="prox_values", seed=1), records)
    val = result.curve.val
    median = final_median(held_out(DistributedNetController(result.params, "prox_values"), 8.0))
    front = probe_sensing(result.params, "prox_values", "front_only")
    elapsed = time.perf_counter() - start
    ok = val[49] < val[0] and median <= 3.0 and elapsed < 600
    report(5, "distributed-network progress", ok,
           f"val MSE {val[0]:.3g} -> {val[49]:.3g}, held-out final median {median:.3f} cm, {elapsed:.1f} s"
           f" (front-only probe non-positive: {bool((front <= 0).all())}, reported only)")
    assert ok


# 6 ------------------------------------------------------------------------------------------


def test_criterion_6_communication_helps(report):
    start = time.perf_counter()
    records = generate_dataset(GenConfig(n_runs=100, n_agents=5, avg_gap=24.0, seed=1))
    dist = train_distributed(TrainConfig("distributed", input_kind="all_sensors", seed=1), records)
    comm = train_comm(TrainConfig("comm", input_kind="all_sensors", seed=1), records)
    m_dist = final_median(held_out(DistributedNetController(dist.params, "all_sensors"), 24.0))
    m_comm = final_median(held_out(CommNetController(comm.params, "all_sensors"), 24.0))
    elapsed = time.perf_counter() - start
    ok = m_comm < m_dist
    report(6, "communication improves spacing", ok,
           f"final median {m_comm:.3f} cm with communication vs {m_dist:.3f} cm without, {elapsed:.1f} s")
    assert ok


# 7 ------------------------------------------------------------------------------------------


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))


def test_criterion_7_metric_oracles(report):
    y = np.random.default_rng(7).normal(size=50)
    r2_exact = r2_score(y, y) == 1.0

    rng = np.random.default_rng(7)
    mismatches = cases = 0
    for n in range(2, 13):
        for labels in itertools.product((0, 1), repeat=n):
            if 0 < sum(labels) < n:
                scores = rng.integers(0, 5, size=n) / 4.0
                cases += 1
                mismatches += roc_auc(scores, labels).auc != pytest.approx(pair_auc(scores, labels), abs=1e-12)

    logs = run_many(ManualColourController(), (5, 10), 1000, seed=7, horizon=0)
    fraction = float(wrong_colour_rate(logs)[1][0])

    ok = r2_exact and mismatches == 0 and 0.45 <= fraction <= 0.55
    report(7, "metric oracles", ok,
           f"r2(y, y) == 1: {r2_exact}; ROC vs pair count: {mismatches}/{cases} mismatches; "
           f"step-0 wrong-colour fraction {fraction:.4f}")
    assert ok


# 8 ------------------------------------------------------------------------------------------


def pipeline(root):
    root.mkdir()
    data, model, out = root / "d.jsonl", root / "m.json", root / "eval"
    assert main(["gen", "--runs", "20", "--n-agents", "5", "10", "--seed", "8", "--out", str(data)]) == 0
    assert main(["train", "--pipeline", "distributed", "--dataset", str(data), "--epochs", "5", "--seed", "8",
                 "--out", str(model)]) == 0
    assert main(["eval", "--task", "1", "--model", str(model), "--dataset", str(data), "--runs", "10", "--seed", "8",
                 "--split-seed", "8", "--out-dir", str(out)]) == 0
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_criterion_8_reproducibility(report, tmp_path):
    files = pipeline(tmp_path / "a")
    assert files == pipeline(tmp_path / "b")
    differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    ok = not differ
    report(8, "reproducibility", ok, f"{len(files)} output files compared, {len(differ)} differ {differ}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
