import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scrapelab.arm import TaskState
from scrapelab.env import (LOG_COLUMNS, OBS_DIM, Action, ClusterSummary, EnvConfig,
                           EpisodeConfig, Observation, RewardParams, ScrapeEnv,
                           action_from_raw, assemble_observation, clamp_action,
                           compute_reward, normalize_observation, wall_contact)
from scrapelab.material import VialGeometry

GEOM = VialGeometry()
CFG = EnvConfig()


def run(actions, profile_seed=0, episode=0, cfg=CFG):
    env = ScrapeEnv(cfg)
    env.reset(profile_seed, episode)
    out = []
    for a in actions:
        obs, r, term, trunc, info = env.step(a)
        out.append((obs, r, term, trunc, info, env.log_row(info)))
        if term or trunc:
            break
    return env, out


def sweep(n=300, f=10.0, tau=1.0):
    """Top-to-bottom pass at constant force."""
    return [Action(f, tau, GEOM.window_z_max - (GEOM.window_z_max - GEOM.window_z_min)
                   * min(1.0, 3 * t / n)) for t in range(n)]


# ---------------------------------------------------------------- reward

def test_reward_hand_case_epsilon_zero():
    r = compute_reward(0.1, [4.0, 0, 0, 0, 0, 0], [], 0.0, RewardParams(epsilon=0.0))
    assert r.r_m == pytest.approx(0.025)


def test_reward_default_epsilon():
    r = compute_reward(0.1, [3.0, 0, 4.0, 0, 0, 0], [], 0.0)
    assert r.r_m == pytest.approx(0.1 / 5.1)


def test_reward_lambda_default():
    assert RewardParams().lambda_c == 0.01
    assert compute_reward(0.0, np.zeros(6), [], 7.0).total == pytest.approx(-0.07)


def test_reward_zero_removal_ignores_wrench():
    assert compute_reward(0.0, [1e6] * 6, [], 0.0).r_m == 0.0
    assert compute_reward(0.0, np.zeros(6), [], 0.0, RewardParams(epsilon=0.0)).r_m == 0.0


def test_reward_milestone_bonuses():
    assert compute_reward(0.0, np.zeros(6), [0], 0.0).r_e == 5.0
    assert compute_reward(0.0, np.zeros(6), [1], 0.0).r_e == 10.0
    assert compute_reward(0.0, np.zeros(6), [0, 1], 0.0).r_e == 15.0


def test_reward_force_only_norm():
    p = RewardParams(wrench_norm="force", epsilon=0.0)
    assert compute_reward(0.2, [3, 0, 4, 0, 100, 0], [], 0, p).r_m == pytest.approx(0.04)
    with pytest.raises(ValueError):
        compute_reward(0.2, np.zeros(6), [], 0, RewardParams(wrench_norm="bogus"))


def test_reward_rejects_negative_removal():
    with pytest.raises(ValueError):
        compute_reward(-0.1, np.zeros(6), [], 0.0)


@given(st.floats(0, 1), st.lists(st.floats(-50, 50), min_size=6, max_size=6),
       st.sets(st.integers(0, 1)), st.floats(0, 1e3))
def test_reward_ledger_property(dm, w, crossed, shaft):
    r = compute_reward(dm, w, sorted(crossed), shaft)
    assert r.r_m >= 0 and r.r_c >= 0
    assert r.total == r.r_m + r.r_e - r.lambda_c * r.r_c


# ---------------------------------------------------------------- contact

def task(x, z, vx=0.0, vz=0.0):
    return TaskState(np.array([x, z]), -math.pi / 2, np.array([vx, vz, 0.0]))


@pytest.mark.parametrize("pen", [0.0, -0.001, -0.1])
def test_contact_none_without_penetration(pen):
    assert wall_contact(task(GEOM.wall_x + pen, 0.1), GEOM) == (0.0, 0.0)


def test_contact_static_press():
    normal, shaft = wall_contact(task(GEOM.wall_x + 0.001, 0.1), GEOM)
    assert normal == pytest.approx(5.0)
    assert shaft == 0.0


def test_contact_damping_and_no_pull():
    normal, _ = wall_contact(task(GEOM.wall_x + 0.001, 0.1, vx=0.02), GEOM)
    assert normal == pytest.approx(6.0)
    normal, _ = wall_contact(task(GEOM.wall_x + 0.001, 0.1, vx=-1.0), GEOM)
    assert normal == 0.0


def test_contact_shaft_penalty_on_rim():
    # vertical tool pressed into the wall also pushes its shaft into the rim
    wrist = (GEOM.wall_x + 0.001, 0.25)
    normal, shaft = wall_contact(task(GEOM.wall_x + 0.001, 0.1), GEOM, wrist=wrist)
    assert normal == pytest.approx(5.0)
    assert shaft == pytest.approx(5.0)
    _, clear = wall_contact(task(GEOM.wall_x + 0.001, 0.1), GEOM,
                            wrist=(GEOM.wall_x - 0.01, 0.25))
    assert clear == 0.0


def test_steady_penetration_matches_command():
    for f in (2.0, 6.0):
        env, _ = run([Action(f, 0.0, GEOM.window_z_max)] * 10)
        pen = env.task_state().x[0] - GEOM.wall_x
        assert 5000.0 * pen == pytest.approx(f, rel=0.05)


# ------------------------------------------------------------ observation

def test_observation_layout():
    ts = TaskState(np.array([0.5, 0.1]), -1.4, np.array([0.3, 0.4, 0.1]))
    summ = ClusterSummary(np.arange(9.0).reshape(3, 3), np.array([10.0, 20.0, 30.0]))
    obs = assemble_observation(ts, [1, 0, 2, 0, 3, 0], summ)
    v = obs.to_vector()
    assert v.shape == (OBS_DIM,)
    assert np.array_equal(v[:3], [0.5, 0.0, 0.1])
    assert np.array_equal(v[3:6], [0.0, -1.4, 0.0])
    assert v[6] == pytest.approx(0.5)
    assert np.array_equal(v[7:13], [1, 0, 2, 0, 3, 0])
    assert np.array_equal(v[13:17], [0, 1, 2, 10])
    assert np.array_equal(v[21:25], [6, 7, 8, 30])


def test_observation_zero_state():
    summ = ClusterSummary(np.ones((3, 3)), np.full(3, 5.0))
    v = assemble_observation(TaskState(np.zeros(2), 0.0, np.zeros(3)), np.zeros(6),
                             summ).to_vector()
    assert np.all(v[:13] == 0.0)
    assert np.any(v[13:] != 0.0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=OBS_DIM, max_size=OBS_DIM))
def test_observation_vector_round_trip(vals):
    v = np.array(vals)
    assert np.array_equal(Observation.from_vector(v).to_vector(), v)


def test_observation_rejects_wrong_length():
    with pytest.raises(ValueError):
        Observation.from_vector(np.zeros(24))


def test_normalization_centres_rest_pose():
    env = ScrapeEnv()
    v = normalize_observation(env.reset(0).to_vector(), GEOM)
    assert np.all(np.abs(v) < 10)


# ---------------------------------------------------------------- actions

@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_raw_action_maps_into_bounds(raw):
    a = action_from_raw(raw, CFG)
    assert 0.0 <= a.f_x_cmd <= 10.0
    assert -2.0 <= a.tau_y_cmd <= 2.0
    assert GEOM.bottom_z <= a.z_desired <= GEOM.rim_z


def test_raw_action_endpoints():
    lo, hi = action_from_raw([-1, -1, -1], CFG), action_from_raw([1, 1, 1], CFG)
    assert (lo.f_x_cmd, lo.tau_y_cmd, lo.z_desired) == (0.0, -2.0, GEOM.bottom_z)
    assert (hi.f_x_cmd, hi.tau_y_cmd) == (10.0, 2.0)
    assert hi.z_desired == pytest.approx(GEOM.rim_z)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-1, 1))
def test_clamp_action(f, tau, z):
    a = clamp_action(Action(f, tau, z), CFG)
    assert 0.0 <= a.f_x_cmd <= 10.0 and -2.0 <= a.tau_y_cmd <= 2.0
    assert GEOM.bottom_z <= a.z_desired <= GEOM.rim_z


def test_step_clamps_logged_action():
    _, out = run([Action(50.0, -9.0, 5.0)])
    row = out[0][5]
    assert (row["f_x_cmd"], row["tau_y_cmd"], row["z_desired"]) == (10.0, -2.0, GEOM.rim_z)


@pytest.mark.parametrize("bad", [Action(float("nan"), 0, 0.1), Action(1, float("inf"), 0.1)])
def test_step_rejects_non_finite(bad):
    env = ScrapeEnv()
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(bad)


def test_step_requires_reset():
    with pytest.raises(RuntimeError):
        ScrapeEnv().step(Action(1, 0, 0.1))


# ---------------------------------------------------------------- episodes

def test_episode_config_cadence_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(control_hz=300)
    with pytest.raises(ValueError):
        EpisodeConfig(policy_hz=7)


def test_reset_deterministic():
    a = ScrapeEnv().reset(4, 2).to_vector()
    b = ScrapeEnv().reset(4, 2).to_vector()
    assert a.tobytes() == b.tobytes()


def test_reset_profile_and_friction_seeds():
    e1, e2, e3 = ScrapeEnv(), ScrapeEnv(), ScrapeEnv()
    e1.reset(1, 0)
    e2.reset(1, 5)
    e3.reset(2, 0)
    assert np.array_equal(e1.profile.thresholds, e2.profile.thresholds)
    assert not np.array_equal(e1.friction, e2.friction)
    assert not np.array_equal(e1.profile.thresholds, e3.profile.thresholds)
    lo, hi = CFG.episode.friction_range
    assert np.all((e1.friction >= lo) & (e1.friction <= hi))


def test_reset_cluster_percentages_sum_to_100():
    obs = ScrapeEnv().reset(3)
    assert obs.clusters[:, 3].sum() == pytest.approx(100.0)


def test_reset_places_tool_at_window_top_in_contact():
    env = ScrapeEnv()
    obs = env.reset(0)
    assert obs.tip_position[0] == pytest.approx(GEOM.wall_x, abs=1e-3)
    assert obs.tip_position[2] == pytest.approx(GEOM.window_z_max, abs=1e-3)
    assert abs(obs.wrench[0]) < 0.2


def test_out_of_plane_entries_always_zero():
    _, out = run(sweep(40))
    for obs, *_ in out:
        v = obs.to_vector()
        assert v[1] == v[3] == v[5] == v[8] == v[10] == v[12] == 0.0
        assert np.all(obs.clusters[:, 1] == 0.0)
        assert obs.speed >= 0.0


def test_zero_force_removes_nothing():
    _, out = run([Action(0.0, 0.0, GEOM.window_z_max - 0.0002 * t) for t in range(30)])
    for obs, r, term, trunc, info, row in out:
        assert info["removed_fraction"] == 0.0
        assert row["r_m"] == 0.0


def test_milestones_latch_once():
    env, out = run(sweep())
    fracs = [o[4]["removed_fraction"] for o in out]
    assert fracs[-1] >= 0.9
    bonuses = [o[5]["r_e"] for o in out]
    assert sorted(b for b in bonuses if b) in ([5.0, 10.0], [15.0])
    assert sum(bonuses) == 15.0
    assert np.all(np.diff(fracs) >= 0)


def test_success_terminates_episode():
    _, out = run(sweep())
    assert out[-1][2] is True
    assert out[-1][4]["removed_fraction"] == 1.0


def test_horizon_truncates():
    cfg = EnvConfig(episode=EpisodeConfig(horizon=3))
    _, out = run([Action(0.0, 0.0, 0.12)] * 5, cfg=cfg)
    assert len(out) == 3
    assert out[-1][3] is True and out[-1][2] is False


def test_reward_ledger_each_step():
    _, out = run(sweep(120))
    for *_, info, row in out:
        assert row["total"] == row["r_m"] + row["r_e"] - 0.01 * row["r_c"]


def test_log_row_columns():
    _, out = run(sweep(3))
    assert tuple(out[0][5]) == LOG_COLUMNS


def test_replay_reproduces_return_bit_for_bit(rng):
    actions = [action_from_raw(rng.uniform(-1, 1, 3), CFG) for _ in range(40)]
    _, first = run(actions, 7, 3)
    logged = [Action(r["f_x_cmd"], r["tau_y_cmd"], r["z_desired"]) for *_, r in first]
    _, second = run(logged, 7, 3)
    assert sum(o[1] for o in first) == sum(o[1] for o in second)
    for a, b in zip(first, second):
        assert a[5] == b[5]
        assert a[0].to_vector().tobytes() == b[0].to_vector().tobytes()


def test_threshold_audit_over_episode():
    env, out = run(sweep())
    p = env.profile
    off = ~p.attached
    assert np.all(p.detach_force[off] >= p.thresholds[off])
