import json

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from srnassoc.cli import main
from srnassoc.errors import ContractError, UnsupportedOperationError
from srnassoc.harness import (
    CSV_FIELDS,
    ExperimentConfig,
    TraceRecord,
    apply_n_change,
    build_run,
    moving_average,
    parse_summary,
    preset_scenarios,
    read_trace,
    run_experiment,
    summarize,
    summary_text,
)

FAST = dict(batch_size=8, replay_capacity=32, target_period=5,
            centralized_hidden=[16, 8], distributed_hidden=[16, 8])


def quick(tmp_path, **kw):
    return ExperimentConfig(**{"frames": 40, "output": str(tmp_path), **FAST, **kw})


# --- moving average ----------------------------------------------------------

def test_moving_average_constant():
    assert np.all(moving_average(np.full(500, 0.3)) == pytest.approx(0.3))


def test_moving_average_window_one_identity():
    x = np.random.default_rng(0).normal(size=50)
    np.testing.assert_allclose(moving_average(x, 1), x)


def test_moving_average_arithmetic_series():
    ma = moving_average(np.arange(1, 401), 200)
    assert ma[399] == pytest.approx(300.5)
    assert ma[0] == 1 and ma[9] == pytest.approx(5.5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.integers(1, 20))
def test_moving_average_matches_loop(xs, w):
    ma = moving_average(xs, w)
    for t in range(len(xs)):
        window = xs[max(0, t + 1 - w): t + 1]
        assert ma[t] == pytest.approx(sum(window) / len(window), rel=1e-9, abs=1e-9)


def test_moving_average_bad_window():
    with pytest.raises(ContractError):
        moving_average([1.0], 0)


# --- config --------------------------------------------------------------------

def test_defaults():
    c = ExperimentConfig()
    assert (c.num_users, c.num_devices, c.rho, c.frames) == (3, 3, 0.99, 10_000)
    assert (c.tx_power_dbm, c.noise_dbm, c.alpha, c.spreading) == (40.0, -114.0, 0.8, 50)
    assert (c.gamma, c.batch_size, c.replay_capacity, c.target_period, c.learning_rate) == (0.3, 64, 800, 100, 0.01)
    assert (c.epsilon_initial, c.epsilon_min, c.epsilon_decay) == (0.2, 0.005, 0.005)
    assert c.centralized_hidden == [256, 128, 64] and c.distributed_hidden == [128, 64, 32]
    assert (c.tx_gain_db, c.rx_gain_db, c.carrier_freq_mhz) == (2.5, 2.5, 2400.0)


def test_config_round_trip(tmp_path):
    c = ExperimentConfig(scenario="x", n_changes={50: 2}, policies=["distributed", "random"], seed=4)
    text = c.to_json()
    again = ExperimentConfig.from_dict(json.loads(text))
    assert again == c and again.to_json() == text
    c.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == c


def test_config_rejects_unknown():
    with pytest.raises(ContractError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ContractError):
        ExperimentConfig(policies=["greedy"])


# --- runs -------------------------------------------------------------------

def test_zero_frames(tmp_path):
    res = run_experiment(quick(tmp_path, frames=0))
    assert res.records == [] and res.summary == {}
    assert res.csv_path.read_text() == ",".join(CSV_FIELDS) + "\n"


def test_four_aligned_policies(tmp_path):
    res = run_experiment(quick(tmp_path))
    assert len(res.records) == 40 * 4
    assert set(res.gain_digests) == {"centralized", "distributed", "optimal", "random"}
    assert len(set(res.gain_digests.values())) == 1
    for p in ("centralized", "distributed", "optimal", "random"):
        frames = [r.frame for r in res.records if r.policy == p]
        assert frames == list(range(1, 41))


def test_csv_byte_identical(tmp_path):
    a = run_experiment(quick(tmp_path / "a", seed=5)).csv_path.read_bytes()
    b = run_experiment(quick(tmp_path / "b", seed=5)).csv_path.read_bytes()
    c = run_experiment(quick(tmp_path / "c", seed=6)).csv_path.read_bytes()
    assert a == b and a != c


def test_streams_independent_of_policy_set(tmp_path):
    full = run_experiment(quick(tmp_path / "a", seed=2), write=False)
    part = run_experiment(quick(tmp_path / "b", seed=2, policies=["random", "optimal"]), write=False)
    np.testing.assert_array_equal(full.series("random"), part.series("random"))
    np.testing.assert_array_equal(full.series("optimal"), part.series("optimal"))


def test_optimal_dominates_in_trace(tmp_path):
    res = run_experiment(quick(tmp_path), write=False)
    opt = res.series("optimal")
    for p in ("centralized", "distributed", "random"):
        assert np.all(opt >= res.series(p) * (1 - 1e-12))


def test_trace_and_summary_files(tmp_path):
    res = run_experiment(quick(tmp_path))
    rows = read_trace(res.csv_path)
    assert len(rows) == len(res.records)
    assert rows[0].epsilon is None or rows[0].policy in ("centralized", "distributed")
    opt_rows = [r for r in rows if r.policy == "optimal"]
    assert all(r.epsilon is None and r.loss is None for r in opt_rows)
    summary = parse_summary(res.summary_path.read_text())
    assert summary["optimal"]["ratio_vs_optimal"] == pytest.approx(1.0)
    assert set(summary["random"]) == {"tail_mean", "ratio_vs_optimal", "ratio_vs_random"}
    assert (tmp_path / "default_seed0_config.json").exists()


def test_summarize_identical_policies():
    recs = [TraceRecord(t, p, 3, 0.4, moving_avg=0.4) for t in range(1, 11) for p in ("distributed", "random")]
    s = summarize(recs, 0.2)
    assert s["distributed"]["ratio_vs_random"] == 1.0
    assert s["distributed"]["ratio_vs_optimal"] is None
    assert "distributed.ratio_vs_optimal=NA" in summary_text(s)
    with pytest.raises(ContractError):
        summarize([], 0.2)


def test_summary_tail_window():
    recs = [TraceRecord(t, "random", 3, float(t), moving_avg=float(t)) for t in range(1, 11)]
    assert summarize(recs, 0.2)["random"]["tail_mean"] == pytest.approx(9.5)


# --- device-count changes ----------------------------------------------------

def test_n_change_steps_trace(tmp_path):
    res = run_experiment(quick(tmp_path, frames=30, n_changes={21: 2},
                               policies=["distributed", "optimal", "random"]))
    for p in ("distributed", "optimal", "random"):
        ns = [r.n_devices for r in res.records if r.policy == p]
        assert ns == [3] * 20 + [2] * 10


def test_n_change_up_starts_at_floor(tmp_path):
    cfg = quick(tmp_path, num_devices=2, n_changes={10: 3}, policies=["distributed"])
    env, policies = build_run(cfg)
    agent = policies["distributed"]
    for _ in range(9):
        env.advance()
        agent.frame_step(env)
    apply_n_change(env, {"distributed": agent}, 3)
    assert np.all(agent.history.gains[:, 2] == 0) and agent.history.last_action[2] == -1
    assert agent.net.input_size == 2 * 3 + 3


def test_n_change_noop(tmp_path):
    env, policies = build_run(quick(tmp_path, policies=["distributed"]))
    agent = policies["distributed"]
    before = (env.gains.copy(), agent.history)
    apply_n_change(env, {"distributed": agent}, 3)
    assert np.array_equal(env.gains, before[0]) and agent.history is before[1]


def test_centralized_rejects_n_change(tmp_path):
    with pytest.raises(UnsupportedOperationError):
        build_run(quick(tmp_path, n_changes={5: 2}))
    env, policies = build_run(quick(tmp_path, policies=["centralized", "distributed"]))
    with pytest.raises(UnsupportedOperationError, match="not scalable"):
        apply_n_change(env, policies, 2)
    assert env.num_devices == 3  # nothing mutated


def test_intractable_optimal_skipped(tmp_path, caplog):
    cfg = quick(tmp_path, num_users=8, num_devices=8, frames=3, policies=["distributed", "optimal", "random"])
    res = run_experiment(cfg, write=False)
    assert "optimal" not in res.gain_digests
    assert "exceed" in caplog.text
    assert res.summary["distributed"]["ratio_vs_optimal"] is None


def test_snapshots_written(tmp_path):
    run_experiment(quick(tmp_path, frames=10, snapshot_every=5, policies=["distributed"]))
    snap = tmp_path / "default_seed0_snapshots"
    assert (snap / "frame5" / "distributed_qnet.npz").exists()
    assert (snap / "frame10" / "distributed_state.json").exists()


def test_presets():
    presets = preset_scenarios()
    assert presets["quasi_static"].rho == 0.99 and presets["moderate"].rho == 0.5 and presets["fast_fading"].rho == 0.0
    assert presets["shrink"].n_changes and "centralized" not in presets["shrink"].policies
    assert presets["large"].num_users == 8 and presets["large"].num_devices == 8


# --- CLI ----------------------------------------------------------------------

def test_cli_run_with_overrides(tmp_path):
    cfg = quick(tmp_path, frames=5)
    path = tmp_path / "cfg.json"
    cfg.save(path)
    runner = CliRunner()
    out = runner.invoke(main, ["run", str(path), "--seed", "3", "--frames", "12", "--policies", '["random"]'])
    assert out.exit_code == 0, out.output
    assert "random.tail_mean=" in out.output
    rows = read_trace(tmp_path / "default_seed3.csv")
    assert len(rows) == 12 and {r.policy for r in rows} == {"random"}


def test_cli_run_requires_seed(tmp_path):
    path = tmp_path / "cfg.json"
    quick(tmp_path).save(path)
    out = CliRunner().invoke(main, ["run", str(path)])
    assert out.exit_code != 0 and "--seed" in out.output


def test_cli_run_unsupported_exits_nonzero(tmp_path):
    path = tmp_path / "cfg.json"
    quick(tmp_path, frames=5).save(path)
    out = CliRunner().invoke(main, ["run", str(path), "--seed", "0", "--n-changes", '{"3": 2}'])
    assert out.exit_code == 3


def test_cli_sweep(tmp_path):
    for name in ("a", "b"):
        quick(tmp_path, scenario=name, frames=5, policies=["random"]).save(tmp_path / f"{name}.json")
    out = CliRunner().invoke(main, ["sweep", str(tmp_path / "*.json"), "--seed", "1", "--seed", "2"])
    assert out.exit_code == 0, out.output
    for stem in ("a_seed1", "a_seed2", "b_seed1", "b_seed2"):
        assert (tmp_path / f"{stem}.csv").exists()


def test_cli_oracle():
    runner = CliRunner()
    out = runner.invoke(main, ["oracle", "--m", "3", "--n", "3", "--seed", "0"])
    assert out.exit_code == 0 and "optimal_sum_rate=" in out.output
    out = runner.invoke(main, ["oracle", "--m", "8", "--n", "8", "--seed", "0"])
    assert out.exit_code == 0 and out.output.startswith("intractable")


def test_cli_scenarios(tmp_path):
    out = CliRunner().invoke(main, ["scenarios", str(tmp_path)])
    assert out.exit_code == 0
    assert ExperimentConfig.load(tmp_path / "moderate.json").rho == 0.5
