"""Command-line front end: train, eval, compare, perception-eval, render.

Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

from . import __version__
from .agent import (CheckpointError, PpoConfig, ScrapeTask, TrainingFailure, curve_csv,
                    load_checkpoint, save_checkpoint, train)
from .arm import DynamicsFailure
from .config import ConfigError, RunConfig, build_config, load_config, resolved_text
from .evaluation import (BaselineRunner, PolicyRunner, compare, compare_csv, eval_csv,
                         eval_jobs, log_text, read_log, replay, run_many, summary_text)
from .material import dump_profile
from .perception import (localize, metrics_csv, random_scene, render, scene_from_profile,
                         score_frame, write_depth, write_ppm)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
STAMP = f"scrapelab {__version__} outputs 1\n"


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    if args.config is None:
        cfg = build_config([])
    else:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = load_config(path)
    if args.seed is not None:
        cfg.run.policy_seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be at least 1")
        cfg.run.workers = args.workers
    if args.out is not None:
        cfg.run.out = args.out
    return cfg


def _out_dir(cfg: RunConfig, argv) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolved_text(cfg), encoding="utf-8")
    (out / "command.txt").write_text(shlex.join(["scrapelab", *argv]) + "\n", encoding="utf-8")
    (out / "VERSION").write_text(STAMP, encoding="utf-8")
    return out


def cmd_train(args, cfg, out):
    ppo = cfg.ppo
    if args.updates is not None:
        if args.updates < 0:
            raise UsageError("--updates must be non-negative")
        ppo = PpoConfig(**{**ppo.__dict__, "total_updates": args.updates})
    env_cfg = cfg.env

    def log(row, stats):
        if not args.quiet:
            print(f"update {row['update']:4d}  return {row['mean_return']:9.3f}  "
                  f"removed {row['mean_removed_fraction']:.3f}", flush=True)

    result = train(_TaskFactory(env_cfg), ppo, seed=cfg.run.policy_seed,
                   workers=cfg.run.workers, checkpoint_every=cfg.run.checkpoint_every,
                   out_dir=out, log=log)
    save_checkpoint(result.model, out / "checkpoint.scrp")
    (out / "learning_curve.csv").write_text(curve_csv(result.curve), encoding="utf-8")
    print(f"wrote {out / 'checkpoint.scrp'}")


class _TaskFactory:
    """Picklable env factory for worker processes."""

    def __init__(self, cfg):
        self.cfg = cfg

    def __call__(self):
        return ScrapeTask(self.cfg)


def _profile_seeds(args, cfg):
    if args.profile_seeds:
        try:
            return [int(s) for s in args.profile_seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError("--profile-seeds takes comma-separated integers") from None
    return cfg.held_out_profiles()


def cmd_eval(args, cfg, out):
    model = load_checkpoint(args.checkpoint)
    n = cfg.run.eval_episodes if args.episodes is None else args.episodes
    if n < 0:
        raise UsageError("--episodes must be non-negative")
    jobs = eval_jobs(_profile_seeds(args, cfg), n)
    results = run_many(cfg.env, jobs, PolicyRunner(model, cfg.env), cfg.run.workers,
                       keep_log=args.logs)
    (out / "eval.csv").write_text(eval_csv(results), encoding="utf-8")
    if args.logs:
        logs = out / "logs"
        logs.mkdir(exist_ok=True)
        for r in results:
            (logs / f"episode_{r.profile_seed}_{r.episode:04d}.csv").write_text(
                log_text(r), encoding="utf-8")
    print(f"wrote {out / 'eval.csv'} ({len(results)} episodes)")


def cmd_compare(args, cfg, out):
    model = load_checkpoint(args.checkpoint)
    profiles = cfg.run.profiles if args.profiles is None else args.profiles
    per = cfg.run.episodes_per_profile if args.episodes_per_profile is None \
        else args.episodes_per_profile
    if profiles < 1 or per < 1:
        raise UsageError("--profiles and --episodes-per-profile must be positive")
    seeds = _profile_seeds(args, cfg) if args.profile_seeds else cfg.held_out_profiles(profiles)
    result = compare(cfg.env, PolicyRunner(model, cfg.env), BaselineRunner(cfg.env, cfg.baseline),
                     seeds, per, cfg.run.oracle_forces, cfg.run.oracle_episodes, cfg.baseline,
                     cfg.run.workers)
    (out / "comparison.csv").write_text(compare_csv(result), encoding="utf-8")
    (out / "summary.txt").write_text(summary_text(result), encoding="utf-8")
    print(summary_text(result), end="")


CONDITIONS = (("spatula", True, False), ("no_spatula", False, False),
              ("filtered_spatula", True, True))


def cmd_perception_eval(args, cfg, out):
    n = cfg.run.n_scenes if args.scenes is None else args.scenes
    if n < 0:
        raise UsageError("--scenes must be non-negative")
    rows = []
    for cond, tool, filt in CONDITIONS:
        for i in range(n):
            scene = random_scene(cfg.run.render_seed * 100003 + i, tool=tool,
                                 geometry=cfg.env.geometry, depth_noise=cfg.run.depth_noise,
                                 artifact_rate=cfg.run.artifact_rate)
            frame, truth = render(scene)
            metrics, _ = score_frame(frame, truth, cfg.perception, seed=i, filter_tool=filt)
            rows.append((cond, i, metrics))
    (out / "perception_metrics.csv").write_text(metrics_csv(rows), encoding="utf-8")
    lines = ["condition,accuracy,precision,recall,specificity,f1"]
    for cond, _, _ in CONDITIONS:
        ms = [m.as_tuple() for c, _, m in rows if c == cond]
        if ms:
            means = [sum(col) / len(ms) for col in zip(*ms)]
            lines.append(cond + "," + ",".join(f"{v:.6f}" for v in means))
    (out / "perception_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def cmd_render(args, cfg, out):
    text = Path(args.log).read_text(encoding="utf-8")
    try:
        profile_seed, episode, rows = read_log(text)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad episode log: {exc}") from None
    frames = out / "frames"
    frames.mkdir(exist_ok=True)
    clusters = ["frame,slot,c_x,c_y,c_z,coverage_pct"]

    def snap(env, i):
        tip = env.task_state().x
        scene = scene_from_profile(env.profile, tip[1], cfg.env.geometry, cfg.run.render_seed)
        frame, truth = render(scene)
        write_ppm(frames / f"frame_{i:04d}.ppm", frame.rgb)
        write_depth(frames / f"frame_{i:04d}.depth", frame.depth)
        (frames / f"profile_{i:04d}.txt").write_text(dump_profile(env.profile),
                                                      encoding="utf-8")
        loc = localize(frame, truth.vial, truth.bbox, cfg.perception, seed=cfg.run.render_seed)
        for s in range(3):
            vals = [*loc.report.centroids[s], loc.report.coverage_pct[s]]
            clusters.append(f"{i},{s}," + ",".join(repr(float(v)) for v in vals))

    try:
        replay(cfg.env, profile_seed, episode, rows, snap)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    (out / "clusters.csv").write_text("\n".join(clusters) + "\n", encoding="utf-8")
    print(f"wrote {len(rows) + 1} frames to {frames}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "perception-eval": cmd_perception_eval, "render": cmd_render}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="policy seed override")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--out", help="output directory")
    p = argparse.ArgumentParser(prog="scrapelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"scrapelab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a PPO policy")
    t.add_argument("--updates", type=int, help="override ppo.total_updates")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--profile-seeds")
    e.add_argument("--logs", action="store_true", help="also write per-episode step logs")

    c = sub.add_parser("compare", parents=[common], help="policy vs fixed-wrench baseline")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--profiles", type=int)
    c.add_argument("--episodes-per-profile", type=int)
    c.add_argument("--profile-seeds")

    pe = sub.add_parser("perception-eval", parents=[common], help="synthetic perception metrics")
    pe.add_argument("--scenes", type=int)

    r = sub.add_parser("render", parents=[common], help="render frames from an episode log")
    r.add_argument("--log", required=True)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        out = _out_dir(cfg, argv)
        COMMANDS[args.command](args, cfg, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DynamicsFailure, TrainingFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
