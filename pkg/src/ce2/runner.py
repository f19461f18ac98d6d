"""Command-line runner: train, re-evaluate, compare strategies, export cluster snapshots.

Layout of one ``run``::

    <output_dir>/<strategy>/config.json
    <output_dir>/<strategy>/summary.json
    <output_dir>/<strategy>/seed_<n>/metrics.csv      # deterministic per seed
    <output_dir>/<strategy>/seed_<n>/timings.csv      # wall-clock seconds per round
    <output_dir>/<strategy>/seed_<n>/snapshots.json
    <output_dir>/<strategy>/seed_<n>/goal_policy.npz

Exit codes: 0 ok, 1 run failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat
from pathlib import Path

import numpy as np

from .agents import GoalPolicy
from .config import ConfigError, ExperimentConfig, apply_override, load_config, parse_points
from .env import EnvSpec, MazeEnv, make_spec
from .goalgen import Agent, RoundMetrics, evaluate, train_loop
from .replay import ReplayBuffer

OUTPUT_DIR_ENV = "CE2_OUTPUT_DIR"
EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("ce2")


# -- building blocks -------------------------------------------------------------
def build_spec(cfg: ExperimentConfig) -> EnvSpec:
    ec = cfg.env
    layout = None
    if ec.layout_file:
        layout = Path(ec.layout_file).read_text()
    goals = parse_points(cfg.env_goals) or None
    try:
        return make_spec(ec.name, layout=layout, size=ec.size, max_episode_len=ec.max_episode_len,
                         success_radius=ec.success_radius or None, step_scale=ec.step_scale, goals=goals)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def eval_goals(cfg: ExperimentConfig, spec: EnvSpec) -> list[np.ndarray]:
    pts = parse_points(cfg.eval.goals)
    goals = [np.asarray(p, dtype=float) for p in pts] or list(spec.goal_distribution)
    if not goals:
        raise ConfigError("eval goal set is empty")
    for g in goals:
        if not spec.is_free(spec.cell_of(g)):
            raise ConfigError(f"eval goal {tuple(g)} is not in a free cell")
    return goals


def coverage(buffer: ReplayBuffer, spec: EnvSpec) -> float:
    """Fraction of free cells whose index appears among the buffer's discretised states."""
    states = buffer.all_states("D")
    free = spec.free.reshape(-1)
    if len(states) == 0:
        return 0.0
    seen = np.zeros(spec.n_cells, dtype=bool)
    seen[spec.cell_ids(states)] = True
    return float(np.sum(seen & free) / np.sum(free))


def metrics_csv(rows: list[RoundMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RoundMetrics.FIELDS)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_goal_policy(policy: GoalPolicy, path: Path) -> None:
    np.savez_compressed(path, q=policy.q)


def load_goal_policy(spec: EnvSpec, path: Path, **kw) -> GoalPolicy:
    with np.load(path) as z:
        q = z["q"]
    policy = GoalPolicy(spec, **kw)
    if q.shape != policy.q.shape:
        raise ValueError(f"policy table shape {q.shape} does not match environment {policy.q.shape}")
    policy.q = q
    return policy


def output_root(cfg: ExperimentConfig, override: str | None = None) -> Path:
    return Path(override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)


# -- run -----------------------------------------------------------------------------
def run_seed(cfg: ExperimentConfig, spec: EnvSpec, seed: int, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    goals = eval_goals(cfg, spec)
    agent = Agent.build(spec, cfg, seed)
    timings = []

    def on_round(m: RoundMetrics, dt: float) -> None:
        timings.append(dt)
        if m.round % 10 == 0 or m.round == cfg.train.rounds - 1:
            log.info("%s seed %d round %d coverage %.3f success %.3f", cfg.strategy.name, seed, m.round,
                     m.coverage, m.success_rate)

    rows = train_loop(agent, goals, on_round=on_round)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    (out / "timings.csv").write_text(
        "round,wall_time\n" + "".join(f"{i},{t:.6f}\n" for i, t in enumerate(timings)))
    (out / "snapshots.json").write_text(json.dumps({"seed": seed, "snapshots": agent.snapshots}))
    save_goal_policy(agent.goal_policy, out / "goal_policy.npz")
    last = rows[-1] if rows else None
    return {
        "seed": seed,
        "coverage": last.coverage if last else coverage(agent.buffer, spec),
        "success_rate": last.success_rate if last else 0.0,
        "env_steps": agent.env_steps,
    }


def summarize(strategy: str, per_seed: list[dict]) -> dict:
    return {
        "strategy": strategy,
        "seeds": per_seed,
        "median_coverage": float(np.median([r["coverage"] for r in per_seed])),
        "median_success_rate": float(np.median([r["success_rate"] for r in per_seed])),
    }


def run(cfg: ExperimentConfig, output_dir: str | None = None, jobs: int = 1) -> dict:
    """Train every configured seed; seeds are independent, so ``jobs > 1`` runs them in worker processes."""
    spec = build_spec(cfg)
    eval_goals(cfg, spec)  # fail on a bad goal set before training anything
    root = output_root(cfg, output_dir) / cfg.strategy.name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    dirs = [root / f"seed_{s}" for s in cfg.seeds]
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(min(jobs, len(cfg.seeds))) as pool:
            per_seed = list(pool.map(run_seed, repeat(cfg), repeat(spec), cfg.seeds, dirs))
    else:
        per_seed = [run_seed(cfg, spec, s, d) for s, d in zip(cfg.seeds, dirs)]
    summary = summarize(cfg.strategy.name, per_seed)
    (root / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def config_from_dict(d: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    lines = []
    for section, values in d.items():
        if isinstance(values, dict):
            lines += [f"{section}.{k} = {v}" for k, v in values.items()]
        elif isinstance(values, list):
            lines.append(f"{section} = {', '.join(str(v) for v in values)}")
        else:
            lines.append(f"{section} = {values}")
    for i, line in enumerate(lines, 1):
        key, raw = line.split("=", 1)
        apply_override(cfg, key.strip(), raw, i)
    cfg.validate()
    return cfg


def evaluate_saved(run_dir: Path, seed: int | None = None, goals: str = "", episodes: int | None = None,
                   rng_seed: int = 0) -> dict:
    """Re-evaluate the goal policies saved under ``run_dir`` (a strategy directory)."""
    cfg = config_from_dict(json.loads((run_dir / "config.json").read_text()))
    if goals:
        cfg.eval.goals = goals
    spec = build_spec(cfg)
    targets = eval_goals(cfg, spec)
    seeds = [seed] if seed is not None else cfg.seeds
    env = MazeEnv(spec)
    rng = np.random.default_rng(rng_seed)
    out = {}
    for s in seeds:
        policy = load_goal_policy(spec, run_dir / f"seed_{s}" / "goal_policy.npz", gamma=cfg.agent.gamma,
                                  epsilon=cfg.agent.epsilon, lr=cfg.agent.lr)
        out[s] = evaluate(policy, env, targets, episodes or cfg.eval.episodes, rng)
    return out


def compare_table(summaries: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "n_seeds", "median_coverage", "median_success_rate"])
    for s in summaries:
        w.writerow([s["strategy"], len(s["seeds"]), f"{s['median_coverage']:.6f}",
                    f"{s['median_success_rate']:.6f}"])
    return buf.getvalue()


def find_summaries(paths: list[str]) -> list[dict]:
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            files = sorted(p.glob("*/summary.json")) + sorted(p.glob("summary.json"))
        else:
            files = [p]
        found += [json.loads(f.read_text()) for f in files]
    return found


def snapshots_csv(snapshot_file: Path) -> str:
    """Flatten a snapshots JSON into ``round,kind,index,x,y,weight`` rows.

    ``centroid`` rows hold decoded GMM centroids; ``goal`` rows hold the goals
    selected since the previous snapshot.
    """
    data = json.loads(Path(snapshot_file).read_text())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "kind", "index", "x", "y", "weight"])
    for snap in data["snapshots"]:
        r = snap["round"]
        weights = snap.get("weights", [])
        for i, (x, y) in enumerate(snap.get("decoded_centroids", [])):
            w.writerow([r, "centroid", i, f"{x:.6f}", f"{y:.6f}", f"{weights[i]:.6f}"])
        for i, (x, y) in enumerate(snap["goals"]):
            w.writerow([r, "goal", i, f"{x:.6f}", f"{y:.6f}", ""])
    return buf.getvalue()


# -- cli ---------------------------------------------------------------------------------
def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ce2", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one strategy over the configured seeds")
    r.add_argument("config", help="key = value config file")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--output-dir", help=f"overrides ${OUTPUT_DIR_ENV} and the config's output_dir")
    r.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel worker processes")

    e = sub.add_parser("eval", help="re-evaluate saved goal policies")
    e.add_argument("run_dir", help="strategy directory written by `run`")
    e.add_argument("--seed", type=int)
    e.add_argument("--goals", default="", help='"x,y; x,y" (default: the run\'s eval goals)')
    e.add_argument("--episodes", type=int)

    c = sub.add_parser("compare", help="table of medians from summary files")
    c.add_argument("paths", nargs="+", help="summary.json files or run output directories")
    c.add_argument("--out", help="write the table here instead of stdout")

    x = sub.add_parser("export-snapshots", help="cluster-evolution CSV from a snapshots JSON")
    x.add_argument("snapshots", help="snapshots.json written by `run`")
    x.add_argument("--out", help="write the CSV here instead of stdout")
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            overrides = [kv.replace("=", " = ", 1) for kv in args.set]
            cfg = load_config(args.config, overrides)
            t0 = time.perf_counter()
            summary = run(cfg, args.output_dir, args.jobs)
            print(json.dumps({k: summary[k] for k in ("strategy", "median_coverage", "median_success_rate")}))
            log.info("finished in %.1f s", time.perf_counter() - t0)
        elif args.command == "eval":
            res = evaluate_saved(Path(args.run_dir), args.seed, args.goals, args.episodes)
            for s, v in res.items():
                print(f"seed {s}: success_rate {v:.6f}")
        elif args.command == "compare":
            summaries = find_summaries(args.paths)
            if not summaries:
                print("no summary files found", file=sys.stderr)
                return EXIT_FAILURE
            _emit(compare_table(summaries), args.out)
        elif args.command == "export-snapshots":
            _emit(snapshots_csv(Path(args.snapshots)), args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any failure maps to the run-failure exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
