"""Command-line entry point: gen, train, simulate, eval, probe.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation as ev
from .controllers import CONTROLLER_NAMES, INPUT_KINDS, make_controller
from .dataset import GEN_CONTROLLERS, GenConfig, SplitSpec, generate_dataset, group_runs, read_dataset, shuffle_split, write_dataset
from .episode import run_episode
from .nn import ShapeError, load_checkpoint
from .training import DEFAULTS, PIPELINES, TrainConfig, train
from .world import ConfigError, ground_truth_colours

log = logging.getLogger("robotrow")

ARCH_CONTROLLER = {"distributed": "net-distributed", "single_comm": "net-comm", "colour": "net-colour"}


class UsageError(Exception):
    pass


def _gap(value: str):
    if value == "variable":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"avg gap must be a number or 'variable', got {value!r}") from None


def _agent_range(values) -> tuple[int, int]:
    if len(values) == 1:
        return values[0], values[0]
    if len(values) == 2:
        return values[0], values[1]
    raise UsageError("--n-agents takes one count or a LO HI range")


def _model_kind(model, requested: Optional[str]) -> str:
    """Sensing variant for a checkpoint; 14-wide sensing can only be all_sensors."""
    sensing = model.input_width - (2 if model.arch == "single_comm" else 0)
    if sensing == 14:
        return "all_sensors"
    if requested == "all_sensors":
        raise ConfigError(f"model takes {sensing} sensing values, not all_sensors")
    return requested or "prox_values"


def _load_model(path):
    return None if path is None else load_checkpoint(path)


# --- commands -----------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = GenConfig(
        controller=args.controller,
        n_runs=args.runs,
        n_agents=_agent_range(args.n_agents),
        avg_gap=args.avg_gap,
        seed=args.seed,
        kind=args.input_kind,
        motor_noise_rel=args.motor_noise,
    )
    records = generate_dataset(cfg)
    meta = write_dataset(args.out, records, cfg)
    print(f"runs {meta['n_runs']} records {meta['n_records']} {meta['content_hash']}")
    return 0


def cmd_train(args) -> int:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {
        "pipeline": args.pipeline,
        "input_kind": args.input,
        "dataset": args.dataset,
        "checkpoint": args.out,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if doc.get("pipeline") is None:
        raise UsageError("--pipeline is required (or set it in --config)")
    if doc.get("input_kind") is None and doc["pipeline"] == "comm":
        doc["input_kind"] = "all_sensors"
    cfg = TrainConfig.from_dict(doc)
    if cfg.checkpoint is None:
        raise UsageError("--out is required (or set checkpoint in --config)")
    result = train(cfg)
    out = Path(cfg.checkpoint)
    ev.emit_csv(out.with_suffix(".loss.csv"), ("epoch", "train", "val"), result.curve.to_rows())
    sizes = [int(w.shape[1]) for w in result.params.weights] + [result.params.output_width]
    print(f"arch {'->'.join(map(str, sizes))} best epoch {result.best_epoch} checkpoint {out}")
    return 0


def cmd_simulate(args) -> int:
    model = _load_model(args.model)
    kind = _model_kind(model, args.input_kind) if model is not None else (args.input_kind or "prox_values")
    controller = make_controller(args.controller, model, kind)
    n = args.n_agents if isinstance(args.n_agents, int) else _agent_range(args.n_agents)
    world = ev.episode_world(n, args.seed, 0, args.avg_gap, args.motor_noise)
    run = run_episode(world, controller, args.steps)
    if args.trace_out:
        rows = []
        for t in range(run.steps):
            for i in range(run.n_agents):
                rows.append((t, i, run.positions[t, i], run.goals[i], run.speeds[t, i], run.tx[t, i],
                             run.rx_left[t, i], run.rx_right[t, i], int(run.colours[t + 1, i]),
                             run.positions[t + 1, i]))
        ev.emit_csv(args.trace_out, ("step", "agent", "x", "goal", "speed", "tx", "rx_left", "rx_right",
                                     "colour", "x_next"), rows)
    err = run.errors[-1][1:-1]
    wrong = int((run.colours[-1] != ground_truth_colours(run.n_agents)).sum())
    print(f"steps {run.steps} converged {run.converged} median_error {np.median(err):.6g} wrong_colours {wrong}")
    return 0


def _eval_task1(args, controllers, out_dir, model, kind):
    summary = []
    for name, ctrl in controllers:
        logs = ev.run_many(ctrl, _agent_range(args.n_agents), args.runs, args.seed, args.avg_gap,
                           horizon=args.steps, motor_noise_rel=args.motor_noise)
        series = ev.distance_stats(logs, horizon=args.steps)
        ev.emit_series_csv(out_dir / f"distance_{name}.csv", series)
        ev.emit_csv(out_dir / f"distance_mean_{name}.csv", ("step", "mean", "std"), series.mean_rows())
        summary.append((name, series.median[-1], series.mean[-1]))
    ev.emit_csv(out_dir / "summary.csv", ("controller", "final_median", "final_mean"), summary)
    if args.dataset:
        test = _test_records(args)
        rows = []
        for name, _ in controllers:
            if name == "expert":
                continue
            rows.append((name, ev.r2_on_records(test, name, model, kind, seed=args.seed)))
        ev.emit_csv(out_dir / "r2.csv", ("controller", "r2"), rows)


def _eval_task2(args, controllers, out_dir, model):
    summary = []
    for name, ctrl in controllers:
        logs = ev.run_many(ctrl, _agent_range(args.n_agents), args.runs, args.seed, args.avg_gap,
                           horizon=max(args.steps, _agent_range(args.n_agents)[1]), motor_noise_rel=args.motor_noise)
        per_run, per_agent = ev.wrong_colour_rate(logs)
        rows = [(t, a, b) for t, (a, b) in enumerate(zip(per_run, per_agent))]
        ev.emit_csv(out_dir / f"wrong_colour_{name}.csv", ("step", "per_run", "per_agent"), rows)
        summary.append((name, per_run[-1], per_agent[-1]))
    ev.emit_csv(out_dir / "summary.csv", ("controller", "final_per_run", "final_per_agent"), summary)
    if args.dataset and model is not None:
        scores, labels = ev.colour_scores(_test_records(args), model, seed=args.seed)
        roc = ev.roc_auc(scores, labels)
        ev.emit_csv(out_dir / "roc.csv", ("threshold", "fpr", "tpr"), roc.rows())
        ev.emit_csv(out_dir / "auc.csv", ("auc",), [(roc.auc,)])


def _test_records(args):
    runs = group_runs(read_dataset(args.dataset))
    test_ids = shuffle_split(list(runs), SplitSpec(seed=args.split_seed))[2]
    return [r for i in test_ids for r in runs[i]]


def cmd_eval(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _load_model(args.model)
    kind = _model_kind(model, args.input_kind) if model is not None else (args.input_kind or "prox_values")
    default = "expert,manual" if args.task == 1 else "manual-colour"
    names = [n for n in (args.baselines or default).split(",") if n]
    if model is not None:
        names.append(ARCH_CONTROLLER[model.arch])
    controllers = [(n, make_controller(n, model if n.startswith("net-") else None, kind)) for n in names]
    for name, ctrl in controllers:
        if ctrl.task != args.task:
            raise ConfigError(f"controller {name} does not solve task {args.task}")
    if args.task == 1:
        _eval_task1(args, controllers, out_dir, model, kind)
    else:
        _eval_task2(args, controllers, out_dir, model)
    print(f"wrote {len(list(out_dir.glob('*.csv')))} CSV files to {out_dir}")
    return 0


def cmd_probe(args) -> int:
    model = _load_model(args.model)
    if args.kind == "sensing":
        if model is None:
            raise UsageError("the sensing probe needs --model")
        kind = _model_kind(model, args.input_kind)
        grid = np.linspace(0.0, 4500.0, args.points or 451)
        speeds = ev.probe_sensing(model, kind, args.axis, grid)
        ev.emit_csv(args.out, ("input", "speed"), zip(grid, speeds))
    else:
        kind = _model_kind(model, args.input_kind) if model is not None else (args.input_kind or "prox_values")
        name = args.controller or (ARCH_CONTROLLER[model.arch] if model is not None else "expert")
        ctrl = make_controller(name, model, kind)
        length = 10.9
        grid = np.linspace(args.left_x + length, args.right_x - length, args.points or 101)
        mean, std = ev.probe_position(ctrl, args.left_x, args.right_x, grid, args.jitters, seed=args.seed)
        ev.emit_csv(args.out, ("x", "mean_speed", "std_speed"), zip(grid, mean, std))
    print(f"wrote {args.out}")
    return 0


# --- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robotrow", description="Robot-row imitation-learning pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def world_flags(sp, n_default, gap_default):
        sp.add_argument("--n-agents", type=int, nargs="+", default=n_default, metavar="N")
        sp.add_argument("--avg-gap", type=_gap, default=gap_default, help="cm, or 'variable' for U[5, 24]")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--motor-noise", type=float, default=0.027, help="relative motor noise std; 0 disables")

    g = sub.add_parser("gen", help="generate a demonstration dataset")
    g.add_argument("--controller", choices=GEN_CONTROLLERS, default="expert")
    g.add_argument("--runs", type=int, default=1000)
    world_flags(g, [5, 10], "variable")
    g.add_argument("--input-kind", choices=list(INPUT_KINDS), default="prox_values",
                   help="sensing used by the manual controller")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a network from a dataset")
    t.add_argument("--pipeline", choices=PIPELINES)
    t.add_argument("--input", choices=list(INPUT_KINDS), help="sensing variant fed to the network")
    t.add_argument("--dataset", help="JSON-Lines dataset (or 'dataset' in --config)")
    t.add_argument("--config", help="JSON TrainConfig document; flags override it")
    t.add_argument("--out", help="checkpoint path; the loss curve goes next to it as .loss.csv")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.epilog = "defaults: " + "; ".join(f"{k}: {v}" for k, v in DEFAULTS.items())
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="run one episode and write its trace")
    s.add_argument("--controller", choices=CONTROLLER_NAMES, default="expert")
    s.add_argument("--model")
    s.add_argument("--input-kind", choices=list(INPUT_KINDS))
    world_flags(s, 5, 8.0)
    s.add_argument("--steps", type=int, default=40)
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("eval", help="matched evaluation episodes and metric CSVs")
    e.add_argument("--task", type=int, choices=(1, 2), default=1)
    e.add_argument("--model")
    e.add_argument("--input-kind", choices=list(INPUT_KINDS))
    e.add_argument("--baselines", help="comma-separated controllers (default expert,manual or manual-colour)")
    e.add_argument("--runs", type=int, default=50)
    world_flags(e, [5, 10], "variable")
    e.add_argument("--steps", type=int, default=40)
    e.add_argument("--dataset", help="dataset whose test split gives R² (task 1) or ROC/AUC (task 2)")
    e.add_argument("--split-seed", type=int, default=0, help="seed of the training split")
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("probe", help="response curves of a controller")
    r.add_argument("--kind", choices=("sensing", "position"), required=True)
    r.add_argument("--model")
    r.add_argument("--controller", choices=CONTROLLER_NAMES)
    r.add_argument("--input-kind", choices=list(INPUT_KINDS))
    r.add_argument("--axis", choices=("front_only", "rear_only"), default="front_only")
    r.add_argument("--points", type=int)
    r.add_argument("--left-x", type=float, default=0.0)
    r.add_argument("--right-x", type=float, default=50.0)
    r.add_argument("--jitters", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_probe)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"robotrow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        log.debug("failure", exc_info=True)
        print(f"robotrow {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
