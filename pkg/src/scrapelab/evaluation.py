"""Episode runners, policy-vs-baseline comparison and episode replay.

Parallel runs fan out over processes and are merged back in job order, so
outputs never depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .agent import ActorCritic, BaselineParams, fixed_wrench_policy, policy_action
from .env import LOG_COLUMNS, Action, EnvConfig, ScrapeEnv

EVAL_COLUMNS = ("profile_seed", "episode", "removed_fraction", "success", "return",
                "mean_wrench")
COMPARE_COLUMNS = ("profile_seed", "policy_mean", "baseline_mean", "improvement",
                   "oracle_best", "s_rel_policy", "s_rel_baseline")
LOG_HEADER = "# scrapelab-log 1"


def relative_success(s_robot: float, s_human: float) -> float:
    """S_rel = 100 * S_robot / S_human (percent of the reference score)."""
    if s_human <= 0:
        raise ValueError("reference score must be positive")
    return 100.0 * s_robot / s_human


def sign_test_p(wins: int, losses: int) -> float:
    """One-sided sign test P(X >= wins), X ~ Binomial(wins + losses, 1/2); ties dropped."""
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0 ** n


@dataclass
class EpisodeResult:
    profile_seed: int
    episode: int
    removed_fraction: float
    ret: float
    mean_wrench: float
    rows: list

    @property
    def success(self) -> bool:
        return self.removed_fraction >= 1.0


def run_episode(cfg: EnvConfig, profile_seed: int, episode: int, policy,
                keep_log: bool = False) -> EpisodeResult:
    """``policy(t, observation) -> Action``."""
    env = ScrapeEnv(cfg)
    obs = env.reset(profile_seed, episode)
    ret = 0.0
    wrench = []
    rows = []
    info = {"removed_fraction": 0.0}
    for t in range(cfg.episode.horizon):
        obs, r, term, trunc, info = env.step(policy(t, obs))
        ret += r
        wrench.append(float(np.linalg.norm(info["wrench_mean"])))
        if keep_log:
            rows.append(env.log_row(info))
        if term or trunc:
            break
    return EpisodeResult(profile_seed, episode, float(info["removed_fraction"]), ret,
                         float(np.mean(wrench)) if wrench else 0.0, rows)


class PolicyRunner:
    """Picklable deterministic-mode policy."""

    def __init__(self, model: ActorCritic, cfg: EnvConfig):
        self.params = model.params
        self.shape = (model.obs_dim, model.act_dim, model.hidden)
        self.cfg = cfg
        self._model = model

    def __getstate__(self):
        return {"params": self.params, "shape": self.shape, "cfg": self.cfg}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._model = ActorCritic(*self.shape, params=self.params)

    def __call__(self, t, obs) -> Action:
        return policy_action(self._model, obs.to_vector(), self.cfg)


class BaselineRunner:
    def __init__(self, cfg: EnvConfig, params: BaselineParams | None = None):
        self.cfg = cfg
        self.params = params or BaselineParams()

    def __call__(self, t, obs) -> Action:
        return fixed_wrench_policy(t, self.cfg, self.params)


def _job(args):
    cfg, seed, ep, policy, keep = args
    return run_episode(cfg, seed, ep, policy, keep)


def run_many(cfg: EnvConfig, jobs, policy, workers: int = 1, keep_log: bool = False):
    """``jobs`` is a list of (profile_seed, episode); results keep that order."""
    args = [(cfg, s, e, policy, keep_log) for s, e in jobs]
    if workers <= 1:
        return [_job(a) for a in args]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(_job, args))


def eval_jobs(profile_seeds, n_episodes):
    """Episode i uses profile i mod P and episode index i div P."""
    p = len(profile_seeds)
    return [(profile_seeds[i % p], i // p) for i in range(n_episodes)] if p else []


def eval_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for r in results:
        w.writerow((r.profile_seed, r.episode, repr(r.removed_fraction), int(r.success),
                    repr(r.ret), repr(r.mean_wrench)))
    return buf.getvalue()


@dataclass
class Comparison:
    rows: list
    mean_improvement: float
    wins: int
    losses: int
    p_value: float


def compare(cfg: EnvConfig, policy, baseline, profile_seeds, episodes_per_profile: int,
            oracle_forces=(), oracle_episodes: int = 0, baseline_params=None,
            workers: int = 1) -> Comparison:
    """Policy vs baseline on identical profile and episode seeds.

    The oracle is the best mean over a sweep of fixed-wrench forces and
    serves as the reference score of the relative-success ratios.
    """
    jobs = [(s, e) for s in profile_seeds for e in range(episodes_per_profile)]
    pol = run_many(cfg, jobs, policy, workers)
    base = run_many(cfg, jobs, baseline, workers)
    bp = baseline_params or BaselineParams()
    oracle = {s: [] for s in profile_seeds}
    for f in oracle_forces:
        sweep = BaselineRunner(cfg, BaselineParams(force=float(f), tau=bp.tau))
        ojobs = [(s, e) for s in profile_seeds for e in range(oracle_episodes)]
        for r in run_many(cfg, ojobs, sweep, workers):
            oracle[r.profile_seed].append((f, r.removed_fraction))
    rows = []
    for s in profile_seeds:
        pm = float(np.mean([r.removed_fraction for r in pol if r.profile_seed == s]))
        bm = float(np.mean([r.removed_fraction for r in base if r.profile_seed == s]))
        means = {}
        for f, v in oracle[s]:
            means.setdefault(f, []).append(v)
        best = max([pm, bm] + [float(np.mean(v)) for v in means.values()])
        rows.append({"profile_seed": s, "policy_mean": pm, "baseline_mean": bm,
                     "improvement": pm - bm, "oracle_best": best,
                     "s_rel_policy": relative_success(pm, best) if best > 0 else 0.0,
                     "s_rel_baseline": relative_success(bm, best) if best > 0 else 0.0})
    wins = sum(r["improvement"] > 0 for r in rows)
    losses = sum(r["improvement"] < 0 for r in rows)
    mean_imp = float(np.mean([r["improvement"] for r in rows])) if rows else 0.0
    return Comparison(rows, mean_imp, wins, losses, sign_test_p(wins, losses))


def compare_csv(cmp: Comparison) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for r in cmp.rows:
        w.writerow([r["profile_seed"]] + [repr(float(r[c])) for c in COMPARE_COLUMNS[1:]])
    return buf.getvalue()


def summary_text(cmp: Comparison) -> str:
    return (f"profiles = {len(cmp.rows)}\n"
            f"mean_improvement = {cmp.mean_improvement!r}\n"
            f"wins = {cmp.wins}\nlosses = {cmp.losses}\n"
            f"sign_test_p = {cmp.p_value!r}\n")


# ------------------------------------------------------------ episode logs

def log_text(result: EpisodeResult) -> str:
    buf = io.StringIO()
    buf.write(f"{LOG_HEADER} profile_seed={result.profile_seed} episode={result.episode}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for row in result.rows:
        w.writerow([repr(float(row[c])) if c != "step" else row[c] for c in LOG_COLUMNS])
    return buf.getvalue()


def read_log(text: str):
    """Returns (profile_seed, episode, rows)."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(LOG_HEADER):
        raise ValueError("not a scrapelab episode log")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(LOG_HEADER):].split())
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
        raise ValueError("episode log has unexpected columns")
    rows = [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()} for r in reader]
    return int(meta["profile_seed"]), int(meta["episode"]), rows


def replay(cfg: EnvConfig, profile_seed: int, episode: int, rows, on_state=None):
    """Re-run logged actions; ``on_state(env, index)`` sees the initial and every later state.

    Raises ValueError if the replayed removal diverges from the log.
    """
    env = ScrapeEnv(cfg)
    env.reset(profile_seed, episode)
    if on_state is not None:
        on_state(env, 0)
    for i, row in enumerate(rows, 1):
        _, _, _, _, info = env.step(Action(row["f_x_cmd"], row["tau_y_cmd"], row["z_desired"]))
        if abs(info["removed_fraction"] - row["removed_fraction"]) > 1e-12:
            raise ValueError(f"replay diverged from the log at step {i}")
        if on_state is not None:
            on_state(env, i)
    return env
