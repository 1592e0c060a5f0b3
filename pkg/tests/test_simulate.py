import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.linalg import null_space

from qjump import simulate as sim
from qjump.simulate import ClickRecord, JumpProcessSpec, StateLabel


def test_spec_validation():
    with pytest.raises(ValueError):
        JumpProcessSpec([(0, 0), (0, 0)], np.zeros((2, 2)), [1, 1], 1.0)
    with pytest.raises(ValueError):
        JumpProcessSpec([(0, 0), (1, 0)], [[0, -1], [1, 0]], [1, 1], 1.0)
    with pytest.raises(ValueError):
        JumpProcessSpec([(0, 0), (1, 0)], np.zeros((2, 2)), [1, -1], 1.0)
    with pytest.raises(ValueError):
        JumpProcessSpec([(0, 0)], [[0]], [1], 0.0)
    with pytest.raises(ValueError):
        JumpProcessSpec([(0, 0), (1, 0)], np.zeros((2, 2)), [1, 1], 1.0, initial=[0.5, 0.6])
    with pytest.raises(KeyError):
        JumpProcessSpec([(0, 0), (1, 0)], np.zeros((2, 2)), [1, 1], 1.0, initial=(2, 0))


def test_generator_rows_sum_to_zero():
    spec = sim.make_two_atom_spec(104, 52, 45, 3, 2, 1, 1.0)
    q = spec.generator()
    assert np.allclose(q.sum(axis=1), 0.0)
    assert np.all(q - np.diag(np.diag(q)) >= 0)


def test_one_atom_steady_state():
    spec = sim.make_one_atom_spec(40, 18, 27e3, 3e3, 1.0)
    assert np.allclose(spec.stationary(), [40 / 58, 18 / 58], atol=1e-12)
    assert np.round(spec.stationary(), 3).tolist() == [0.69, 0.31]
    sym = sim.make_one_atom_spec(7, 7, 2, 1, 1.0)
    assert np.allclose(sym.stationary(), [0.5, 0.5])


def test_one_atom_warns_on_inverted_fluxes():
    with pytest.warns(UserWarning):
        sim.make_one_atom_spec(40, 18, 3e3, 27e3, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sim.make_one_atom_spec(40, 18, 27e3, 3e3, 1.0)


def test_two_atom_stationary_matches_null_space():
    spec = sim.make_two_atom_spec(104, 52, 45, 3, 2, 1, 1.0)
    ns = null_space(spec.generator().T)[:, 0]
    ns = ns / ns.sum()
    assert np.allclose(spec.stationary(), ns, atol=1e-8)


def test_two_atom_without_repumper_ends_in_zero():
    spec = sim.make_two_atom_spec(104, 52, 0.0, 3, 2, 1, 5.0)
    assert np.allclose(spec.stationary(), [1, 0, 0], atol=1e-12)
    traj = sim.sample_trajectory(spec, 3)
    assert traj.state_at([5.0 - 1e-9])[0].alpha == 0


def test_absorbing_chain_holds_initial_state():
    spec = JumpProcessSpec([(0, 0), (1, 0)], np.zeros((2, 2)), [1.0, 2.0], 2.5, initial=(1, 0))
    traj = sim.sample_trajectory(spec, 0)
    assert traj.times.size == 0
    assert traj.segments() == [(0.0, 2.5, StateLabel(1, 0))]


@pytest.mark.slow
def test_long_run_occupation_fraction():
    spec = sim.make_one_atom_spec(40, 18, 1.0, 0.5, 1e4)
    traj = sim.sample_trajectory(spec, 11)
    occ = traj.occupation([(0, 0), (1, 0)]) / spec.duration
    assert occ[0] == pytest.approx(40 / 58, abs=0.01)


def test_exit_rate_and_holding_times():
    spec = sim.make_one_atom_spec(40, 18, 1.0, 0.5, 200.0)
    traj = sim.sample_trajectory(spec, 5)
    segs = traj.segments()[:-1]  # last segment is censored
    dwell1 = np.array([b - a for a, b, s in segs if s.alpha == 1])
    rate = dwell1.size / dwell1.sum()
    assert rate == pytest.approx(40, rel=0.05)
    assert stats.kstest(dwell1, "expon", args=(0, 1 / 40)).pvalue > 1e-3


def test_initial_probability_vector_is_sampled():
    spec = JumpProcessSpec([(0, 0), (1, 0)], np.zeros((2, 2)), [1, 1], 1.0, initial=[0.25, 0.75])
    starts = [sim.sample_trajectory(spec, s).initial_state.alpha for s in range(2000)]
    assert np.mean(starts) == pytest.approx(0.75, abs=0.04)


def test_simulate_is_deterministic_per_seed():
    spec = sim.make_one_atom_spec(40, 18, 27e3, 3e3, 0.5)
    a_traj, a_rec = sim.simulate(spec, 123)
    b_traj, b_rec = sim.simulate(spec, 123)
    assert np.array_equal(a_rec.intervals, b_rec.intervals)
    assert np.array_equal(a_traj.times, b_traj.times)
    _, c_rec = sim.simulate(spec, 124)
    assert not np.array_equal(a_rec.intervals[:10], c_rec.intervals[:10])


def test_zero_flux_gives_no_clicks():
    spec = JumpProcessSpec([(0, 0)], [[0]], [0.0], 1.0)
    _, rec = sim.simulate(spec, 0)
    assert len(rec) == 0 and rec.duration == 1.0


def test_poisson_count_in_one_second():
    spec = JumpProcessSpec([(0, 0)], [[0]], [27000.0], 1.0)
    for seed in range(5):
        _, rec = sim.simulate(spec, seed)
        assert abs(len(rec) - 27000) < 4 * np.sqrt(27000)
        assert rec.times[-1] <= 1.0


def test_clicks_follow_segments():
    traj = sim.Trajectory(StateLabel(0), np.array([0.5]), [StateLabel(1)], 1.0)
    rec = sim.emit_clicks(traj, {StateLabel(0): 5000.0, StateLabel(1): 0.0}, seed=1)
    assert len(rec) > 0
    assert np.all(rec.times <= 0.5)
    with pytest.raises(KeyError):
        sim.emit_clicks(traj, {StateLabel(0): 1.0}, seed=1)


def test_clicks_are_uniform_within_segment():
    traj = sim.Trajectory(StateLabel(0), np.array([]), [], 1.0)
    rec = sim.emit_clicks(traj, {StateLabel(0): 20000.0}, seed=2)
    assert stats.kstest(rec.times, "uniform").pvalue > 1e-3


def test_trajectory_state_at_and_occupation():
    traj = sim.Trajectory(StateLabel(1), np.array([0.2, 0.7]), [StateLabel(0), StateLabel(1)], 1.0)
    assert [s.alpha for s in traj.state_at([0.1, 0.2, 0.5, 0.9])] == [1, 0, 0, 1]
    assert np.allclose(traj.occupation([(0, 0), (1, 0)]), [0.5, 0.5])


def test_split_state_identity_and_errors():
    spec = sim.make_one_atom_spec(40, 18, 27e3, 3e3, 1.0)
    assert sim.split_state(spec, 1, [3e3], 100.0) is spec
    with pytest.raises(KeyError):
        sim.split_state(spec, 2, [1, 2], 1.0)
    split = sim.split_state(spec, 1, [1e3, 5e3], 100.0)
    with pytest.raises(ValueError):
        sim.split_state(split, 1, [1, 2], 1.0)


def test_split_state_preserves_alpha_dynamics():
    spec = sim.make_one_atom_spec(40, 18, 27e3, 3e3, 1.0)
    split = sim.split_state(spec, 1, [1e3, 2e3, 6e3], 300.0)
    assert split.n_states == 4
    pi = split.stationary()
    alpha = split.alphas()
    assert pi[alpha == 0].sum() == pytest.approx(40 / 58, abs=1e-10)
    # each site leaves alpha=1 at r10; alpha=0 enters the sites at r01 in total
    q = split.rates
    assert np.allclose(q[alpha == 1][:, alpha == 0], 40.0)
    assert q[alpha == 0][:, alpha == 1].sum() == pytest.approx(18.0)
    assert np.allclose(split.initial_distribution()[alpha == 1], 1 / 3)


def test_split_fast_hopping_is_poissonian():
    # 100 hops per bin: excess variance is below 1% of the mean
    spec = JumpProcessSpec([(1, 0)], [[0]], [0.0], 5.0)
    split = sim.split_state(spec, 1, [2e3, 6e3], 1e5)
    _, rec = sim.simulate(split, 4)
    counts = np.bincount(np.floor(rec.times / 1e-3).astype(int), minlength=5000)[:5000]
    assert counts.mean() == pytest.approx(4.0, rel=0.03)
    assert counts.var() / counts.mean() == pytest.approx(1.0, abs=0.08)


def test_split_slow_hopping_is_super_poissonian():
    spec = JumpProcessSpec([(1, 0)], [[0]], [0.0], 20.0)
    split = sim.split_state(spec, 1, [2e3, 6e3], 100.0)
    _, rec = sim.simulate(split, 4)
    counts = np.bincount(np.floor(rec.times / 1e-3).astype(int), minlength=20000)[:20000]
    assert counts.var() / counts.mean() > 1.5


def test_click_file_round_trip_is_bit_exact(tmp_path):
    spec = sim.make_one_atom_spec(40, 18, 27e3, 3e3, 0.3)
    _, rec = sim.simulate(spec, 9)
    path = tmp_path / "c.txt"
    sim.write_clicks(path, rec)
    back = sim.read_clicks(path)
    assert np.array_equal(back.intervals, rec.intervals)
    assert back.duration == rec.duration
    assert sim.format_clicks(back) == path.read_text()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-9, 1.0, allow_nan=False), min_size=0, max_size=50))
def test_click_format_round_trip_property(intervals):
    rec = ClickRecord(np.array(intervals), duration=60.0)
    back = sim.parse_clicks(sim.format_clicks(rec))
    assert np.array_equal(back.intervals, rec.intervals)


def test_click_format_version_checked():
    with pytest.raises(ValueError):
        sim.parse_clicks("#clicks v2 duration_s=1.0\n0.1\n")
    with pytest.raises(ValueError):
        sim.parse_clicks("0.1\n0.2\n")


def test_click_record_rejects_nonpositive_intervals():
    with pytest.raises(ValueError):
        ClickRecord(np.array([0.1, 0.0]))


def test_trajectory_round_trip():
    spec = sim.make_two_atom_spec(104, 52, 45, 3, 2, 1, 0.5)
    traj = sim.sample_trajectory(spec, 1)
    back = sim.parse_trajectory(sim.format_trajectory(traj))
    assert np.array_equal(back.times, traj.times)
    assert back.new_states == traj.new_states and back.initial_state == traj.initial_state
    assert back.duration == traj.duration
