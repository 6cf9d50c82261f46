"""Command-line entry point: ``airground {train,resume,eval,render,config}``."""

from __future__ import annotations

import argparse
import os
import sys
from typing import Sequence

from . import checkpoint as ckpt
from .config import PRESETS, RunConfig, format_config, parse_config, preset
from .errors import AirGroundError
from .evalkit import (
    Probe,
    compute_metrics,
    export_trajectory_csv,
    read_trajectory_csv,
    records_summary_csv,
    render_curves_svg,
    render_trajectory_svg,
    run_inference,
)
from .ppo import MetricsLog, episode_returns, read_metrics
from .trainer import Trainer, checkpoint_bytes, restore
from .world import EnvVariant, build_world


def _overrides(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise AirGroundError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_config(args) -> RunConfig:
    text = ""
    if getattr(args, "preset", None):
        text = preset(args.preset)
    elif getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    cfg = parse_config(text)
    over = _overrides(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        over["train.seed"] = str(args.seed)
    if getattr(args, "simultaneous_baseline", False):
        over["train.mode"] = "simultaneous"
    if getattr(args, "no_icm", False):
        over["uav.curiosity_strength"] = "0"
        over["ugv.curiosity_strength"] = "0"
    if getattr(args, "workers", None) is not None:
        over["train.workers"] = str(args.workers)
    return cfg.with_overrides(over) if over else cfg


def _train_loop(trainer: Trainer, out: str, probe: Probe | None = None) -> int:
    path = os.path.join(out, "checkpoint.bin")
    every = trainer.cfg.train.checkpoint_every
    while trainer.state.stage in ("stage1", "stage2"):
        trainer.iterate()
        if trainer.state.uav.updates % every == 0:
            _write_checkpoint(trainer, path)
        if probe is not None and probe(trainer):
            break
    _write_checkpoint(trainer, path)
    print(f"finished: stage {trainer.state.stage} at step {trainer.state.global_step}; checkpoint {path}")
    if probe is not None:
        probe.finish(trainer)
        step, _, m = probe.rows[-1]
        print(f"probe: success {100 * m.success_rate:.1f}% over {m.episodes} {probe.mode} episodes at step {step}")
        if probe.stop_success is not None:
            if probe.reached_at is None:
                print(f"probe: success {probe.stop_success:g} not reached")
                return 1
            print(f"probe: success {probe.stop_success:g} reached at step {probe.reached_at}")
            return 0
    return 0 if trainer.state.stage == "done" else 1


def _write_checkpoint(trainer: Trainer, path: str) -> None:
    with open(path + ".tmp", "wb") as fh:
        fh.write(checkpoint_bytes(trainer))
    os.replace(path + ".tmp", path)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
    trainer = Trainer(
        cfg,
        metrics=MetricsLog(os.path.join(args.out, "metrics.tsv")),
        gate_report=os.path.join(args.out, "gate_report.tsv"),
        verbose=sys.stdout if args.verbose else None,
    )
    probe = None
    if args.probe_every:
        probe = Probe(args.probe_every, args.probe_episodes, args.probe_mode, args.stop_success,
                      os.path.join(args.out, "probe.tsv"))
    elif args.stop_success is not None:
        raise AirGroundError("--stop-success needs --probe-every")
    return _train_loop(trainer, args.out, probe)


def _trainer_from_checkpoint(path: str, out: str | None, verbose: bool) -> Trainer:
    with open(path, "rb") as fh:
        data = fh.read()
    _, meta, _ = ckpt.decode(data)
    cfg = parse_config(meta["config_text"], env={})
    metrics = MetricsLog(os.path.join(out, "metrics.tsv"), append=True) if out is not None else None
    trainer = Trainer(cfg, use_icm=meta["use_icm"], metrics=metrics, verbose=sys.stdout if verbose else None)
    return restore(trainer, data)


def cmd_resume(args) -> int:
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    trainer = _trainer_from_checkpoint(args.checkpoint, out, args.verbose)
    return _train_loop(trainer, out)


def cmd_eval(args) -> int:
    trainer = _trainer_from_checkpoint(args.checkpoint, None, False)
    cfg = trainer.cfg
    variant = args.variant or cfg.env.variant
    episodes = args.episodes or cfg.eval.episodes
    seed = cfg.train.seed if args.seed is None else args.seed
    env_cfg = cfg.env_config(variant if args.variant else None)
    records = run_inference(
        trainer.state.uav.params,
        trainer.state.ugv.params,
        variant,
        episodes,
        seed,
        env_cfg=env_cfg,
        deterministic=not args.stochastic,
        mode=args.mode,
    )
    m = compute_metrics(records)
    sys.stdout.write(m.as_table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.txt"), "w", encoding="utf-8") as fh:
            fh.write(m.as_table())
        with open(os.path.join(args.out, "metrics.kv"), "w", encoding="utf-8") as fh:
            fh.write(m.as_keyvalue())
        with open(os.path.join(args.out, "episodes.csv"), "w", encoding="utf-8") as fh:
            fh.write(records_summary_csv(records))
        for k in range(min(args.save_trajectories, len(records))):
            export_trajectory_csv(records[k], os.path.join(args.out, f"trajectory_{k:04d}.csv"))
    return 0


def cmd_render(args) -> int:
    if args.mode == "trajectory":
        records = [read_trajectory_csv(p) for p in args.input]
        variant = EnvVariant.by_name(args.variant)
        world = build_world(variant, args.world_seed)
        svg = render_trajectory_svg(world, records)
    else:
        runs = []
        for p in args.input:
            steps, ret = episode_returns(read_metrics(p), args.agent)
            runs.append((os.path.basename(os.path.dirname(os.path.abspath(p))) or p, steps, ret))
        svg = render_curves_svg(runs, title=f"{args.agent.upper()} mean episode return")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    return 0


def cmd_config(args) -> int:
    if args.print_preset:
        sys.stdout.write(format_config(parse_config(preset(args.print_preset), env={})))
        return 0
    if not args.print_defaults:
        raise AirGroundError("nothing to do; try --print-defaults")
    sys.stdout.write(format_config(RunConfig()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airground", description="UAV/UGV search training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from scratch")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--config", help="config file (defaults apply when omitted)")
    src.add_argument("--preset", choices=tuple(PRESETS), help="built-in scaled-down configuration")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--simultaneous-baseline", action="store_true", help="skip stage 1 and train both agents from scratch")
    t.add_argument("--no-icm", action="store_true", help="zero the curiosity strength of both agents")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--workers", type=int)
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--probe-every", type=int, metavar="STEPS", help="measure success every STEPS environment steps")
    t.add_argument("--probe-episodes", type=int, default=100)
    t.add_argument("--probe-mode", choices=("uav", "system"), default="uav")
    t.add_argument("--stop-success", type=float, metavar="RATE", help="stop once a probe reaches RATE (exit 1 if never)")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("resume", help="continue a run from its checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out")
    r.add_argument("--verbose", action="store_true")
    r.set_defaults(func=cmd_resume)

    e = sub.add_parser("eval", help="inference episodes and success metrics")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--variant", choices=("original", "complex"))
    e.add_argument("--seed", type=int)
    e.add_argument("--mode", choices=("system", "uav"), default="system")
    e.add_argument("--stochastic", action="store_true", help="sample actions instead of taking the mode")
    e.add_argument("--out", help="directory for metrics and trajectory files")
    e.add_argument("--save-trajectories", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("render", help="SVG of trajectories or reward curves")
    d.add_argument("--input", required=True, action="append", help="trajectory CSV or metrics TSV (repeatable)")
    d.add_argument("--mode", choices=("trajectory", "curves"), required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--variant", choices=("original", "complex"), default="original")
    d.add_argument("--world-seed", type=int, default=0)
    d.add_argument("--agent", choices=("uav", "ugv"), default="uav")
    d.set_defaults(func=cmd_render)

    c = sub.add_parser("config", help="inspect configuration")
    c.add_argument("--print-defaults", action="store_true")
    c.add_argument("--print-preset", choices=tuple(PRESETS))
    c.set_defaults(func=cmd_config)
    return p


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except (AirGroundError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"airground {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
