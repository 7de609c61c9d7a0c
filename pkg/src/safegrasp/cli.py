"""Command-line entry point.

Subcommands::

    safegrasp train        train an agent, with periodic deterministic evaluation
    safegrasp evaluate     roll out a policy (checkpoint/scripted/random), write metrics
    safegrasp assess       functional-safety assessment from rollouts or a log file
    safegrasp replay       audit a log: recompute rewards from the logged events
    safegrasp bench        compare the compiled and fallback kernel paths
    safegrasp init-config  print the default configuration file

Exit codes: 0 success, 1 audit/assertion failure, 2 usage or configuration
error, 3 IO failure.
"""

from __future__ import annotations

import os

# pin BLAS threading before numpy loads: keeps runs bit-reproducible on
# multi-core hosts (no effect if numpy is already imported)
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_overrides, default_config_text, load_config
from .env import RewardConfig, compute_reward, TransitionEvents
from .fsa import build_report, format_report_text, inputs_from_episodes, run_assessment
from .metrics import summarize
from .rollout import rollout_episodes
from .runlog import EpisodeLogWriter, load_episodes, read_log, records_to_episodes
from .tqc import RandomPolicy, ScriptedGraspPolicy, TqcAgent
from .training import Trainer
from .world import DisturbanceSpec

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_USAGE = 2
EXIT_IO = 3


class AuditFailure(Exception):
    """A log failed its integrity audit."""


def _timestamp() -> str:
    return datetime.now().strftime("%Y%m%d-%H%M%S")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="config file (INI)")
    parser.add_argument("--seed", type=int, default=None, help="run seed override")
    parser.add_argument(
        "--scenario", choices=("normal", "obstacle"), default=None, help="task scenario"
    )
    parser.add_argument(
        "--reward-mode", choices=("drl", "sd-drl"), default=None, help="reward engine mode"
    )
    parser.add_argument("--out", type=Path, default=None, help="output directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safegrasp", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"safegrasp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an agent")
    _add_common(p_train)
    p_train.add_argument("--steps", type=int, default=200_000, help="environment steps")
    p_train.add_argument(
        "--eval-every", type=int, default=25, help="episodes between evaluations"
    )
    p_train.add_argument(
        "--eval-episodes", type=int, default=10, help="episodes per evaluation block"
    )
    p_train.add_argument("--workers", type=int, default=1, help="rollout workers")
    p_train.add_argument(
        "--checkpoint-every", type=int, default=None, help="steps between checkpoints"
    )

    p_eval = sub.add_parser("evaluate", help="roll out a policy and write metrics")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, default=None, help="agent checkpoint")
    p_eval.add_argument(
        "--policy",
        choices=("checkpoint", "scripted", "random"),
        default="checkpoint",
        help="policy source",
    )
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument(
        "--disturb-surface", type=float, default=0.0, help="surface height delta (m)"
    )
    p_eval.add_argument(
        "--disturb-object", type=float, default=0.0, help="object size delta (m)"
    )

    p_assess = sub.add_parser("assess", help="functional-safety assessment")
    _add_common(p_assess)
    p_assess.add_argument("--checkpoint", type=Path, default=None)
    p_assess.add_argument(
        "--policy",
        choices=("checkpoint", "scripted", "random"),
        default="checkpoint",
    )
    p_assess.add_argument("--log", type=Path, default=None, help="assess a recorded log")
    p_assess.add_argument("--episodes", type=int, default=500)
    p_assess.add_argument("--disturb-surface", type=float, default=0.075)
    p_assess.add_argument("--disturb-object", type=float, default=0.005)
    p_assess.add_argument(
        "--no-disturb", action="store_true", help="disable the disturbance injection"
    )
    p_assess.add_argument(
        "--scenarios",
        choices=("normal", "obstacle", "both"),
        default="both",
        help="scenario set for the assessment rollouts",
    )

    p_replay = sub.add_parser("replay", help="audit a recorded log")
    p_replay.add_argument("--log", type=Path, required=True)
    p_replay.add_argument(
        "--config",
        type=Path,
        default=None,
        help="recompute with this config's reward table instead of the log header",
    )

    p_bench = sub.add_parser("bench", help="benchmark compiled vs fallback kernels")
    p_bench.add_argument("--repeats", type=int, default=200)

    p_init = sub.add_parser("init-config", help="print the default config file")
    p_init.add_argument("--out", type=Path, default=None, help="write to a file instead")
    return parser


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    return apply_overrides(
        config,
        seed=args.seed,
        scenario=getattr(args, "scenario", None),
        reward_mode=getattr(args, "reward_mode", None),
        out_dir=None,
    )


def _resolve_policy(kind: str, checkpoint, config: RunConfig, seed: int):
    if kind == "checkpoint":
        if checkpoint is None:
            raise ConfigError("--checkpoint is required with --policy checkpoint")
        if not Path(checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {checkpoint}")
        agent = TqcAgent.load(checkpoint, seed=seed)
        snapshot = agent.actor_snapshot()
        return lambda obs: snapshot.select_action(obs.vector, stochastic=False)
    if kind == "scripted":
        scripted = ScriptedGraspPolicy(
            action_scale=config.env.action_scale,
            dt=config.env.dt,
            grasp_radius=config.env.grasp_radius,
            obstacle_half_extents=config.scene.obstacle_half_extents,
            eef_radius=config.scene.eef_radius,
        )
        return lambda obs: scripted(obs)
    random_policy = RandomPolicy(seed=seed)
    return lambda obs: random_policy(obs)


def _out_dir(args, config: RunConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(config.out_dir) / f"{_timestamp()}_s{config.seed}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = _load_run_config(args)
    out_dir = _out_dir(args, config)
    trainer = Trainer(
        config,
        out_dir,
        total_steps=args.steps,
        eval_every_episodes=args.eval_every,
        eval_episodes=args.eval_episodes,
        workers=args.workers,
        checkpoint_every_steps=args.checkpoint_every,
    )
    summary = trainer.run()
    final = summary["final_eval"]
    print(f"run directory: {out_dir}")
    print(
        f"trained {summary['total_steps']} steps / {summary['episodes']} episodes "
        f"/ {summary['updates']} updates"
    )
    print(
        f"final eval: success_rate={final['success_rate']:.3f} "
        f"safety_driven={final['safety_driven_success_rate']:.3f} "
        f"return_norm={final['average_return_normalized']:.4f}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    policy = _resolve_policy(args.policy, args.checkpoint, config, config.seed)
    disturbance = DisturbanceSpec(args.disturb_surface, args.disturb_object)
    out_dir = _out_dir(args, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = config.build_env()
    log_path = out_dir / f"eval_{_timestamp()}_s{config.seed}.jsonl"
    writer = EpisodeLogWriter(
        log_path,
        header={
            "seed": config.seed,
            "scenario": config.scenario.value,
            "reward": config.reward.as_dict(),
            "policy": args.policy,
            "disturbance": {
                "surface_height_delta": disturbance.surface_height_delta,
                "object_size_delta": disturbance.object_size_delta,
            },
        },
    )
    records = rollout_episodes(
        env,
        policy,
        episodes=args.episodes,
        base_seed=config.seed,
        stream=1,
        scenario=config.scenario,
        disturbance=disturbance,
        log_writer=writer,
    )
    writer.close()
    summary = summarize(records)
    (out_dir / "metrics.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"log: {log_path}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_assess(args) -> int:
    config = _load_run_config(args)
    out_dir = _out_dir(args, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.log is not None:
        if not args.log.exists():
            raise ConfigError(f"log file not found: {args.log}")
        episodes = load_episodes(args.log)
        if not episodes:
            raise ConfigError(f"log file contains no episodes: {args.log}")
        report = build_report(inputs_from_episodes(episodes))
    else:
        policy = _resolve_policy(args.policy, args.checkpoint, config, config.seed)
        disturbance = (
            None
            if args.no_disturb
            else DisturbanceSpec(args.disturb_surface, args.disturb_object)
        )
        scenarios = (
            ["normal", "obstacle"] if args.scenarios == "both" else [args.scenarios]
        )
        per_scenario = max(1, args.episodes // len(scenarios))
        all_records = []
        for scenario in scenarios:
            env = config.build_env()
            writer = EpisodeLogWriter(
                out_dir / f"assess_{scenario}_{_timestamp()}_s{config.seed}.jsonl",
                header={
                    "seed": config.seed,
                    "scenario": scenario,
                    "reward": config.reward.as_dict(),
                    "policy": args.policy,
                },
            )
            _, records = run_assessment(
                env,
                policy,
                episodes=per_scenario,
                seed=config.seed,
                scenario=scenario,
                disturbance=disturbance,
                log_writer=writer,
            )
            all_records.extend(records)
        report = build_report(inputs_from_episodes(all_records))
    (out_dir / "fsa_report.json").write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    text = format_report_text(report)
    (out_dir / "fsa_report.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_replay(args) -> int:
    if not args.log.exists():
        raise ConfigError(f"log file not found: {args.log}")
    header, records = read_log(args.log)
    if not records:
        raise ConfigError(f"log file contains no step records: {args.log}")
    if args.config is not None:
        reward_config = load_config(args.config).reward
    elif "reward" in header:
        reward_config = RewardConfig.from_dict(header["reward"])
    else:
        raise ConfigError("log has no reward header; supply --config")
    for index, record in enumerate(records):
        events = TransitionEvents.from_dict(record["events"])
        expected = compute_reward(events, reward_config)
        logged = float(record["reward"])
        if expected != logged:
            print(
                f"audit failure at record {index} "
                f"(episode {record.get('episode')}, step {record.get('step')}): "
                f"logged reward {logged!r} != recomputed {expected!r}",
                file=sys.stderr,
            )
            return EXIT_AUDIT
    episodes = records_to_episodes(records)
    print(
        f"audit ok: {len(records)} step records, {len(episodes)} episodes, "
        "rewards reproducible from events"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    from .accel import NUMBA_ENABLED
    from . import kernels

    rng = np.random.default_rng(0)
    dh = np.array(
        [
            [0.0, 0.089159, np.pi / 2, 0.0],
            [-0.425, 0.0, 0.0, 0.0],
            [-0.39225, 0.0, 0.0, 0.0],
            [0.0, 0.10915, np.pi / 2, 0.0],
            [0.0, 0.09465, -np.pi / 2, 0.0],
            [0.0, 0.0823, 0.0, 0.0],
        ]
    )
    limits = np.tile((-2 * np.pi, 2 * np.pi), (6, 1))
    q = rng.uniform(-1.5, 1.5, 6)
    target = np.array([0.45, 0.1, 0.1])
    preds = rng.normal(size=(2, 128, 25))
    targets = rng.normal(size=(128, 46))
    taus = (2.0 * np.arange(1, 26) - 1.0) / 50.0
    point = np.array([0.5, 0.0, -0.06])
    center = np.array([0.5, 0.0, -0.075])
    half = np.array([0.025, 0.025, 0.025])

    cases = {
        "fk_frames": lambda fn: fn(dh, q),
        "ik_dls": lambda fn: fn(dh, limits, q, target, 0.05, 1e-4, 200),
        "sphere_box_signed_distance": lambda fn: fn(point, center, half),
        "quantile_huber_loss_grad": lambda fn: fn(preds, targets, taus),
    }

    def time_fn(fn, call, repeats):
        call(fn)  # warm-up (and JIT compile)
        start = time.perf_counter()
        for _ in range(repeats):
            call(fn)
        return (time.perf_counter() - start) / repeats * 1e6

    mode = "numba" if NUMBA_ENABLED else "numpy (SAFEGRASP_NUMBA=0 or numba missing)"
    print(f"active kernel mode: {mode}")
    print(f"{'kernel':<28} {'selected us':>12} {'fallback us':>12} {'speedup':>8}")
    for name, call in cases.items():
        selected, fallback = kernels.BENCH_PAIRS[name]
        t_sel = time_fn(selected, call, args.repeats)
        t_fb = time_fn(fallback, call, args.repeats)
        ratio = t_fb / t_sel if t_sel > 0 else float("inf")
        print(f"{name:<28} {t_sel:>12.2f} {t_fb:>12.2f} {ratio:>7.1f}x")
    return EXIT_OK


def cmd_init_config(args) -> int:
    text = default_config_text()
    if args.out is not None:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "assess": cmd_assess,
    "replay": cmd_replay,
    "bench": cmd_bench,
    "init-config": cmd_init_config,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AuditFailure as exc:
        print(f"audit failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
