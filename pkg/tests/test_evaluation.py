import pytest

from scrapelab.env import EnvConfig, EpisodeConfig
from scrapelab.evaluation import (BaselineRunner, compare, compare_csv, eval_csv, eval_jobs,
                                  log_text, read_log, relative_success, replay, run_episode,
                                  run_many, sign_test_p)
from scrapelab.material import removed_fraction

SHORT = EnvConfig(episode=EpisodeConfig(horizon=15))


def test_relative_success_reference_case():
    assert round(relative_success(56.8, 90.1), 1) == 63.0


def test_relative_success_rejects_zero_reference():
    with pytest.raises(ValueError):
        relative_success(1.0, 0.0)


@pytest.mark.parametrize("w,l,p", [(5, 0, 1 / 32), (4, 1, 6 / 32), (0, 0, 1.0), (0, 3, 1.0)])
def test_sign_test(w, l, p):
    assert sign_test_p(w, l) == pytest.approx(p)


def test_eval_jobs_cycle_profiles():
    assert eval_jobs([10, 20], 5) == [(10, 0), (20, 0), (10, 1), (20, 1), (10, 2)]
    assert eval_jobs([10], 0) == [] and eval_jobs([], 3) == []


def test_eval_csv_header_only():
    assert eval_csv([]) == "profile_seed,episode,removed_fraction,success,return,mean_wrench\n"


def test_episode_result_ranges():
    r = run_episode(SHORT, 1, 0, BaselineRunner(SHORT))
    assert 0.0 <= r.removed_fraction <= 1.0
    assert r.success == (r.removed_fraction >= 1.0)


def test_run_many_worker_count_irrelevant():
    jobs = [(1, 0), (2, 0), (1, 1)]
    a = run_many(SHORT, jobs, BaselineRunner(SHORT), workers=1)
    b = run_many(SHORT, jobs, BaselineRunner(SHORT), workers=2)
    assert eval_csv(a) == eval_csv(b)


def test_identical_sides_improve_nothing():
    base = BaselineRunner(SHORT)
    cmp = compare(SHORT, base, base, [3, 4], 2)
    assert all(r["improvement"] == 0.0 for r in cmp.rows)
    assert cmp.wins == cmp.losses == 0 and cmp.p_value == 1.0
    for r in cmp.rows:
        assert r["improvement"] == r["policy_mean"] - r["baseline_mean"]


def test_compare_oracle_bounds_both_sides():
    cmp = compare(SHORT, BaselineRunner(SHORT), BaselineRunner(SHORT), [5], 1,
                  oracle_forces=(2.0, 8.0), oracle_episodes=1)
    row = cmp.rows[0]
    assert row["oracle_best"] >= max(row["policy_mean"], row["baseline_mean"])
    assert compare_csv(cmp).splitlines()[0].startswith("profile_seed,policy_mean")


def test_log_round_trip_and_replay():
    r = run_episode(SHORT, 6, 1, BaselineRunner(SHORT), keep_log=True)
    seed, ep, rows = read_log(log_text(r))
    assert (seed, ep, len(rows)) == (6, 1, len(r.rows))
    seen = []
    env = replay(SHORT, seed, ep, rows, lambda env, i: seen.append(i))
    assert seen == list(range(len(rows) + 1))
    assert removed_fraction(env.profile) == r.removed_fraction


def test_replay_detects_tampering():
    r = run_episode(SHORT, 6, 1, BaselineRunner(SHORT), keep_log=True)
    _, _, rows = read_log(log_text(r))
    rows[-1]["removed_fraction"] += 0.5
    with pytest.raises(ValueError):
        replay(SHORT, 6, 1, rows)


def test_read_log_rejects_foreign_text():
    with pytest.raises(ValueError):
        read_log("step,x\n1,2\n")
