"""Command line: ``aircombat {train,eval,export}``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical
failure, 3 checkpoint integrity failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import AirCombatError, ConfigError, IntegrityError
from .checkpoint import load_checkpoint
from .config import config_digest, load_config
from .evaluation import evaluate
from .training import Session, config_from_checkpoint, run_training
from .trajectory import export_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INTEGRITY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aircombat", description="Train and evaluate air-combat policies.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("train", "train policies"), ("eval", "evaluate a checkpoint"),
                       ("export", "write one episode as a trajectory table")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--task")
        p.add_argument("--protocol")
        p.add_argument("--algo")
        p.add_argument("--seed", help="one seed, or a comma-separated list for train")
        p.add_argument("--timesteps", type=int)
        p.add_argument("--out", help="output directory (train) or file (export)")
        p.add_argument("--checkpoint", help="checkpoint to resume (train) or load (eval/export)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config override")
        p.add_argument("--force", action="store_true", help="load checkpoints despite a config digest mismatch")
        if name == "eval":
            p.add_argument("--episodes", type=int)
    return parser


def _overrides(args) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key] = value
    for flag, key in (("task", "task"), ("protocol", "protocol"), ("algo", "algo"), ("seed", "seeds"),
                      ("timesteps", "total_timesteps")):
        value = getattr(args, flag)
        if value is not None:
            out[key] = str(value)
    if args.command == "train" and args.out is not None:
        out["out_dir"] = args.out
    if getattr(args, "episodes", None) is not None:
        out["eval_episodes"] = str(args.episodes)
    return out


def _explicit_config(args) -> bool:
    return args.config is not None or any(
        getattr(args, f) is not None for f in ("task", "protocol", "algo")
    ) or bool(args.set)


def _session_from_args(args):
    """Load the checkpoint, using the stored config unless one is given."""
    ckpt = load_checkpoint(args.checkpoint, force=args.force)
    stored_seed = int(ckpt.arrays["meta/counters"][0])
    if _explicit_config(args):
        cfg = load_config(args.config, _overrides(args))
        if ckpt.digest != config_digest(cfg, stored_seed) and not args.force:
            raise IntegrityError("checkpoint config digest does not match the given config (use --force)")
    else:
        cfg = config_from_checkpoint(ckpt)
        if getattr(args, "episodes", None) is not None:
            cfg.eval_episodes = args.episodes
    return Session.from_checkpoint(ckpt, cfg), cfg


def _seed_arg(args, default: int) -> int:
    if args.seed is None:
        return default
    try:
        return int(args.seed)
    except ValueError:
        raise ConfigError(f"--seed must be a single integer here, got {args.seed!r}") from None


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if args.checkpoint is not None and args.seed is not None and len(cfg.seeds) != 1:
        raise ConfigError("resuming takes a single seed")
    results = run_training(cfg, resume=args.checkpoint, force=args.force, log=lambda s: print(s, flush=True))
    for r in results:
        tail = "" if r.last_eval is None else f" eval_avg={r.last_eval[0]:.6g} eval_max={r.last_eval[1]:.6g}"
        print(f"seed={r.seed} timestep={r.timestep} metrics={r.metrics_path} checkpoint={r.checkpoint_path}{tail}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint")
    session, cfg = _session_from_args(args)
    seed = _seed_arg(args, session.seed)
    avg, best = evaluate(session.policies, cfg, cfg.eval_episodes, seed)
    print(f"episodes={cfg.eval_episodes} seed={seed} average={avg:.17g} max={best:.17g}")
    return EXIT_OK


def cmd_export(args) -> int:
    if args.checkpoint is None:
        raise ConfigError("export needs --checkpoint")
    session, cfg = _session_from_args(args)
    seed = _seed_arg(args, session.seed)
    out = Path(args.out) if args.out else Path(f"trajectory-seed{seed}.csv")
    score = export_trajectory(session.policies, cfg, seed, out)
    print(f"wrote {out} episode_score={score:.17g}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"train": cmd_train, "eval": cmd_eval, "export": cmd_export}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (AirCombatError, ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
