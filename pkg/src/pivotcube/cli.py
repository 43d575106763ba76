"""Command-line surface: train, eval, plan, check.

Configuration precedence is flag > config file > built-in defaults (the
published hyperparameter table for 4- and 6-module systems); the effective
configuration is echoed into every metrics/report header. Every command is
deterministic given its flags and seed; the default seed comes from the
PIVOTCUBE_SEED environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import env as env_mod
from . import geometry, matching, net, oracle, sac
from .env import EnvConfig
from .sac import SacAgent, SacConfig

SEED_ENV_VAR = "PIVOTCUBE_SEED"


@dataclass
class RunConfig:
    modules: int
    seed: int = 0
    epochs: int = 500
    batch_number: int = 200
    batch_size: int = 512
    buffer_capacity: int = 20_000_000
    lr_actor: float = 9e-4
    lr_critic: float = 9e-4
    lr_alpha: float = 3e-4
    init_log_alpha: float = -2.0
    tau: float = 0.005
    gamma: float = 0.98
    her_ratio: float = 0.8
    max_steps: Optional[int] = None
    start_mode: str = "line"
    strict_connectivity: bool = False
    eval_goals: int = 100
    eval_rounds: int = 20
    episodes_per_epoch: int = 16
    eval_every: int = 10
    hidden: tuple[int, ...] = (256, 256)
    target_entropy: Optional[float] = None
    store_masks: bool = False
    disable_her: bool = False
    disable_masking: bool = False
    printed_reward_sign: bool = False

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            n=self.modules,
            max_steps=self.max_steps,
            start_mode=self.start_mode,
            strict_connectivity=self.strict_connectivity,
            gamma=self.gamma,
            printed_reward_sign=self.printed_reward_sign,
        )

    def sac_config(self) -> SacConfig:
        return SacConfig(
            epochs=self.epochs,
            episodes_per_epoch=self.episodes_per_epoch,
            batch_number=self.batch_number,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
            hidden=tuple(self.hidden),
            lr_actor=self.lr_actor,
            lr_critic=self.lr_critic,
            lr_alpha=self.lr_alpha,
            init_log_alpha=self.init_log_alpha,
            tau=self.tau,
            target_entropy=self.target_entropy,
            her_ratio=self.her_ratio,
            disable_her=self.disable_her,
            disable_masking=self.disable_masking,
            store_masks=self.store_masks,
            eval_every=self.eval_every,
            eval_goals=self.eval_goals,
        )

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = ",".join(str(h) for h in self.hidden)
        return out


# Published hyperparameters for the 4- and 6-module systems; other sizes get
# conservative desk-scale values.
_TABLE_DEFAULTS = {
    4: dict(epochs=500, batch_number=200, batch_size=512,
            buffer_capacity=20_000_000, init_log_alpha=-2.0),
    6: dict(epochs=1200, batch_number=500, batch_size=256,
            buffer_capacity=1_000_000, init_log_alpha=-1.0),
}
_OTHER_DEFAULTS = dict(epochs=500, batch_number=200, batch_size=256,
                       buffer_capacity=1_000_000, init_log_alpha=-2.0)

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_BOOL_FIELDS = {
    "strict_connectivity", "store_masks", "disable_her", "disable_masking",
    "printed_reward_sign",
}
_INT_FIELDS = {
    "modules", "seed", "epochs", "batch_number", "batch_size",
    "buffer_capacity", "max_steps", "eval_goals", "eval_rounds",
    "episodes_per_epoch", "eval_every",
}
_FLOAT_FIELDS = {
    "lr_actor", "lr_critic", "lr_alpha", "init_log_alpha", "tau", "gamma",
    "her_ratio", "target_entropy",
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_FIELDS:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")
    if key in _INT_FIELDS:
        return int(float(raw))  # accept 2e7-style literals
    if key in _FLOAT_FIELDS:
        return float(raw)
    if key == "hidden":
        return tuple(int(p) for p in raw.split(",") if p)
    if key == "start_mode":
        return raw
    raise ConfigError(f"unknown config key {key!r}")


def load_config_file(path) -> dict:
    """Flat key=value config; '#' starts a comment; keys mirror flag names."""
    values: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def resolve_config(modules: int, file_values: dict, flag_values: dict) -> RunConfig:
    """Merge defaults(n) <- config file <- flags (None flags are unset)."""
    cfg = RunConfig(modules=modules)
    for key, value in _TABLE_DEFAULTS.get(modules, _OTHER_DEFAULTS).items():
        setattr(cfg, key, value)
    for source in (file_values, flag_values):
        for key, value in source.items():
            if value is None or key == "modules":
                continue
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
    return cfg


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    return int(raw) if raw else 0


# -- rendering ------------------------------------------------------------------


def render_cells(cells: Sequence[geometry.Cell]) -> str:
    """Per-z-layer ASCII grids; '0' marks the anchored module at the origin,
    '#' any other occupied cell."""
    cells = list(cells)
    xs = [c[0] for c in cells]
    ys = [c[1] for c in cells]
    zs = [c[2] for c in cells]
    occupied = set(cells)
    lines = []
    for z in range(min(zs), max(zs) + 1):
        lines.append(f"z={z}")
        for y in range(max(ys), min(ys) - 1, -1):
            row = []
            for x in range(min(xs), max(xs) + 1):
                if (x, y, z) == (0, 0, 0) and (x, y, z) in occupied:
                    row.append("0")
                elif (x, y, z) in occupied:
                    row.append("#")
                else:
                    row.append(".")
            lines.append("".join(row))
    return "\n".join(lines)


# -- commands --------------------------------------------------------------------


def _add_runconfig_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=None)
    for name in sorted(_INT_FIELDS - {"modules", "seed"}):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int, default=None)
    for name in sorted(_FLOAT_FIELDS):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=None)
    for name in sorted(_BOOL_FIELDS):
        p.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            action=argparse.BooleanOptionalAction,
            default=None,
        )
    p.add_argument("--hidden", type=str, default=None,
                   help="comma-separated hidden layer sizes, e.g. 256,256")
    p.add_argument("--start-mode", dest="start_mode", choices=("line", "random"),
                   default=None)


def _flag_values(args: argparse.Namespace) -> dict:
    values = {}
    for key in _FIELD_TYPES:
        if key == "modules":
            continue
        if hasattr(args, key) and getattr(args, key) is not None:
            value = getattr(args, key)
            if key == "hidden" and isinstance(value, str):
                value = tuple(int(p) for p in value.split(",") if p)
            values[key] = value
    return values


def _resolve_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    cfg = resolve_config(args.modules, file_values, _flag_values(args))
    cfg.seed = args.seed if args.seed is not None else file_values.get("seed", default_seed())
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    env_cfg = cfg.env_config()
    meta = cfg.as_dict()
    meta["max_steps"] = env_cfg.max_steps
    print(f"training n={cfg.modules} seed={cfg.seed} epochs={cfg.epochs}")

    def log_fn(row):
        ev = row["eval_success_rate"]
        print(
            f"epoch {row['epoch']:4d} steps {row['env_steps']:8d} "
            f"critic {row['critic_loss']:.4f} actor {row['actor_loss']:.4f} "
            f"alpha {row['alpha']:.4f} H {row['policy_entropy']:.3f} "
            f"train_sr {row['train_success_rate']:.2f}"
            + (f" eval_sr {ev:.2f}" if ev is not None else "")
        )

    try:
        result = sac.train(env_cfg, cfg.sac_config(), cfg.seed, log_fn=log_fn)
    except sac.TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    sac.write_metrics_csv(result.rows, args.metrics_out, header_meta=meta)
    result.agent.save(args.checkpoint_out)
    print(f"wrote {args.metrics_out} and {args.checkpoint_out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    try:
        agent = SacAgent.load(args.checkpoint)
    except (ValueError, OSError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return 2
    env_cfg = EnvConfig(n=agent.n, max_steps=args.max_steps)
    report = sac.evaluate(agent, env_cfg, args.goals, args.rounds, seed)
    if args.json:
        print(json.dumps({
            "n": agent.n,
            "seed": seed,
            "goals_per_round": args.goals,
            "rounds": args.rounds,
            "round_success_rates": report.success_rates,
            "round_mean_rewards": report.mean_rewards,
            "mean_success_rate": report.mean_success,
            "mean_reward": report.mean_reward,
        }))
    else:
        print(f"# n={agent.n} seed={seed} goals={args.goals} rounds={args.rounds}")
        for i, (sr, mr) in enumerate(zip(report.success_rates, report.mean_rewards)):
            print(f"round {i:2d}: success_rate {sr:.4f} mean_reward {mr:.4f}")
        print(f"overall: success_rate {report.mean_success:.4f} "
              f"mean_reward {report.mean_reward:.4f}")
    return 0


def _parse_goal(raw: str, n: int):
    try:
        data = json.loads(raw)
        cells = tuple(tuple(int(v) for v in cell) for cell in data)
        if any(len(c) != 3 for c in cells):
            raise ValueError("goal cells must be [x,y,z] triples")
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed goal literal: {exc}") from exc
    if len(cells) != n:
        raise ConfigError(f"goal has {len(cells)} cells, checkpoint expects {n}")
    try:
        return env_mod.canonical_goal(cells)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        agent = SacAgent.load(args.checkpoint)
    except (ValueError, OSError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return 2
    env_cfg = EnvConfig(n=agent.n, max_steps=args.max_steps)
    try:
        goal = _parse_goal(args.goal, agent.n)
        if frozenset(goal) == frozenset(env_mod.line_start(agent.n)):
            raise ConfigError("goal equals the start configuration")
    except ConfigError as exc:
        print(f"invalid goal: {exc}", file=sys.stderr)
        return 2

    out = open(args.out, "w") if args.out else sys.stdout
    try:
        header = {
            "format": "pivotcube-trajectory",
            "version": 1,
            "n": agent.n,
            "max_steps": env_cfg.max_steps,
            "goal": [list(c) for c in goal],
        }
        out.write(json.dumps(header) + "\n")
        state = env_mod.line_start(agent.n)
        mask = geometry.action_mask(state)
        done = False
        for step_idx in range(env_cfg.max_steps):
            action = agent.act_greedy(state, goal, mask)
            result = env_mod.step(state, action, goal, step_idx, env_cfg)
            record = env_mod.trajectory_record(
                step_idx, action, state, result.state, result.reward,
                result.done, goal,
            )
            out.write(json.dumps(record) + "\n")
            if args.ascii:
                print(f"-- step {step_idx} action {action}", file=sys.stderr)
                print(render_cells(result.state), file=sys.stderr)
            state, mask, done = result.state, result.mask, result.done
            if result.done or result.truncated:
                break
    finally:
        if args.out:
            out.close()
    return 0 if done else 1


def run_checks(
    seed: int,
    samples: int = 200,
    swept_fn=None,
    endpoint_fn=None,
    distance_fn=None,
    connected_fn=None,
) -> tuple[bool, list[str]]:
    """Cross-check the closed-form implementations against the oracles.

    The *_fn hooks exist for fault injection in tests; they default to the
    production implementations.
    """
    swept_fn = swept_fn or geometry.swept_cells
    endpoint_fn = endpoint_fn or geometry.rotation_endpoint
    distance_fn = distance_fn or matching.config_distance
    connected_fn = connected_fn or geometry.is_connected
    rng = np.random.default_rng(seed)
    lines = [f"seed={seed}"]

    # 1. sweep/endpoint vs 1-degree sampled geometry, at random base cells
    checked = 0
    for edge in geometry.EDGES:
        for angle in geometry.ANGLES:
            base = tuple(rng.integers(-5, 6, size=3))
            want = oracle.sampled_sweep(base, edge, angle)
            got = swept_fn(base, edge, angle)
            if got != want:
                lines.append(
                    f"FAIL sweep {edge} {angle} at {base}: {sorted(got)} != {sorted(want)}"
                )
                return False, lines
            if endpoint_fn(base, edge, angle) not in want:
                lines.append(f"FAIL endpoint {edge} {angle} at {base} not in sweep")
                return False, lines
            checked += 1
    lines.append(f"sweep sets: {checked} (edge, angle) pairs OK")

    # 2. assignment distance vs factorial enumeration
    for i in range(samples):
        n = int(rng.integers(2, 7))
        s = [tuple(rng.integers(-4, 5, size=3)) for _ in range(n)]
        g = [tuple(rng.integers(-4, 5, size=3)) for _ in range(n)]
        got = distance_fn(s, g)
        want = oracle.brute_force_distance(s, g)
        if abs(got - want) > 1e-9:
            lines.append(f"FAIL distance #{i}: {got} != {want} for {s} vs {g}")
            return False, lines
    lines.append(f"assignment distance: {samples} random pairs OK")

    # 3. transitive-closure connectivity vs BFS
    for i in range(samples):
        m = int(rng.integers(1, 11))
        cells = {tuple(rng.integers(-2, 3, size=3)) for _ in range(m)}
        if connected_fn(cells) != oracle.bfs_connected(cells):
            lines.append(f"FAIL connectivity #{i} on {sorted(cells)}")
            return False, lines
    lines.append(f"connectivity: {samples} random cell sets OK")

    # 4. mask soundness on random reachable states
    states = 0
    for n in (3, 4):
        state = env_mod.line_start(n)
        for _ in range(samples // 4):
            mask = geometry.action_mask(state)
            for action_id in range(1, len(mask)):
                rot = geometry.decode_action(action_id, n)
                verdict = geometry.check_rotation(state, rot)
                if mask[action_id] != (verdict is geometry.RotationCheck.VALID):
                    lines.append(f"FAIL mask bit {action_id} on {state}")
                    return False, lines
                if mask[action_id]:
                    nxt = geometry.apply(state, rot)
                    if len(set(nxt)) != n or nxt[0] != (0, 0, 0) or not oracle.bfs_connected(nxt):
                        lines.append(f"FAIL apply invariants for {action_id} on {state}")
                        return False, lines
            states += 1
            moves = np.flatnonzero(mask[1:]) + 1
            if len(moves):
                rot = geometry.decode_action(int(rng.choice(moves)), n)
                state = geometry.apply(state, rot)
    lines.append(f"mask soundness: {states} reachable states OK")
    return True, lines


def cmd_check(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    ok, lines = run_checks(seed, samples=args.samples)
    for line in lines:
        print(line)
    print("all checks passed" if ok else "CHECK FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pivotcube",
        description="Pivoting-cube reconfiguration: train, evaluate, plan, check.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an agent and write checkpoint + metrics")
    p_train.add_argument("--modules", type=int, required=True)
    _add_runconfig_flags(p_train)
    p_train.add_argument("--checkpoint-out", default="agent.ckpt")
    p_train.add_argument("--metrics-out", default="metrics.csv")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on random goals")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--goals", type=int, default=100)
    p_eval.add_argument("--rounds", type=int, default=20)
    p_eval.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--json", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_plan = sub.add_parser("plan", help="greedy rollout toward a goal, emitted as JSONL")
    p_plan.add_argument("--checkpoint", required=True)
    p_plan.add_argument("--goal", required=True, help='JSON cells, e.g. [[0,0,0],[0,1,0]]')
    p_plan.add_argument("--out", default=None, help="write JSONL here instead of stdout")
    p_plan.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p_plan.add_argument("--ascii", action="store_true",
                        help="print per-z-layer grids to stderr after each step")
    p_plan.set_defaults(func=cmd_plan)

    p_check = sub.add_parser("check", help="run the oracle cross-check suite")
    p_check.add_argument("--seed", type=int, default=None)
    p_check.add_argument("--samples", type=int, default=200)
    p_check.set_defaults(func=cmd_check)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.error(str(exc))  # exits with code 2


if __name__ == "__main__":
    sys.exit(main())
