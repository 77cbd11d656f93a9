import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopgp import (
    Standardizer,
    Trajectory,
    load_trajectories,
    save_trajectories,
    standardize,
    window_dataset,
)
from koopgp.data import DataError, apply_standardizer


def write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    def test_groups_one_trajectory(self, tmp_path):
        p = write(tmp_path, "traj_id,t,x1,x2\n0,0.0,1,2\n0,1.0,3,4\n0,2.0,5,6\n")
        trajs = load_trajectories(p, 2)
        assert len(trajs) == 1 and len(trajs[0]) == 3
        assert np.allclose(trajs[0].states[1], [3, 4])

    def test_empty_file_gives_empty_list(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        assert load_trajectories(p, 2) == []
        p.write_text("traj_id,t,x1,x2\n")
        assert load_trajectories(p, 2) == []

    def test_duplicate_time_names_line(self, tmp_path):
        p = write(tmp_path, "traj_id,t,x1\n0,0.0,1\n0,0.0,2\n")
        with pytest.raises(DataError, match=r":3"):
            load_trajectories(p, 1)

    def test_non_monotone_time(self, tmp_path):
        p = write(tmp_path, "traj_id,t,x1\n0,1.0,1\n0,0.5,2\n")
        with pytest.raises(DataError, match="non-monotone"):
            load_trajectories(p, 1)

    def test_malformed_row_names_line(self, tmp_path):
        p = write(tmp_path, "traj_id,t,x1\n0,0.0,1\n0,1.0,oops\n")
        with pytest.raises(DataError, match=r":3"):
            load_trajectories(p, 1)

    def test_wrong_width_rejected(self, tmp_path):
        p = write(tmp_path, "traj_id,t,x1\n0,0.0,1,9\n")
        with pytest.raises(DataError, match=r":2"):
            load_trajectories(p, 1)

    def test_output_column_roundtrip(self, tmp_path):
        traj = Trajectory(np.arange(4.0), np.arange(8.0).reshape(4, 2), np.arange(4.0) * 2)
        p = tmp_path / "o.csv"
        save_trajectories(p, [traj])
        back = load_trajectories(p, 2)
        assert np.allclose(back[0].outputs, traj.outputs)
        assert np.allclose(back[0].states, traj.states)


def line_traj(n_points, dt=1.0):
    t = np.arange(n_points) * dt
    states = np.column_stack([t, 2.0 * t + 1.0])
    return Trajectory(t, states)


class TestWindowing:
    def test_single_anchor_counts(self):
        ts = window_dataset([line_traj(64)], 0, 32, 32)
        assert ts.n_pairs == 32 and ts.n_windows == 1
        assert ts.window_grid[0] == pytest.approx(-31.0 / 32.0)
        assert ts.window_grid[-1] == 0.0
        assert ts.times.max() == 1.0

    def test_horizon_one(self):
        ts = window_dataset([line_traj(10)], 0, 3, 1, stride=1)
        # anchors at indices 2..8 -> 7 pairs, one per anchor
        assert ts.n_pairs == 7
        assert np.all(ts.times == 1.0)

    def test_minimal_trajectory_enumeration(self):
        # 5 points, past 3, horizon 2: the single admissible anchor is index 2;
        # hand enumeration gives targets at indices 3 and 4.
        traj = line_traj(5)
        ts = window_dataset([traj], 1, 3, 2)
        assert ts.n_pairs == 2 and ts.n_windows == 1
        assert np.allclose(ts.targets, traj.states[3:5, 1])
        assert np.allclose(ts.times * ts.standardizer.time_scale, [1.0, 2.0])

    def test_shared_grid_is_same_array(self):
        ts = window_dataset([line_traj(12), line_traj(12)], 0, 4, 4, stride=2)
        pairs = ts.pairs
        assert all(p.past.times is ts.window_grid for p in pairs)

    def test_too_short_rejected(self):
        with pytest.raises(DataError, match="points"):
            window_dataset([line_traj(5)], 0, 4, 2)

    def test_non_equidistant_rejected(self):
        t = np.array([0.0, 1.0, 2.5, 3.0])
        traj = Trajectory(t, np.zeros((4, 1)) + t[:, None])
        with pytest.raises(DataError, match="equidistant"):
            window_dataset([traj], 0, 2, 1)

    def test_mixed_sample_period_rejected(self):
        with pytest.raises(DataError, match="sample period"):
            window_dataset([line_traj(6, 1.0), line_traj(6, 0.5)], 0, 3, 2)

    def test_output_column_target(self):
        traj = Trajectory(np.arange(6.0), np.zeros((6, 1)), np.arange(6.0) ** 2)
        ts = window_dataset([traj], "y", 3, 2)
        assert np.allclose(ts.targets, [9.0, 16.0])


class TestStandardize:
    def test_two_point_targets(self):
        traj = Trajectory(np.arange(4.0), np.array([[0.0], [1.0], [1.0], [3.0]]))
        ts = window_dataset([traj], 0, 2, 2)
        out, std = standardize(ts)
        assert np.allclose(out.targets, [-1.0, 1.0])
        assert abs(out.targets.mean()) < 1e-10 and abs(out.targets.std() - 1) < 1e-10

    def test_idempotent_on_standardized(self, tmp_path):
        ts = window_dataset([line_traj(16)], 1, 4, 4, stride=1)
        once, _ = standardize(ts)
        twice, std2 = standardize(once)
        assert np.allclose(once.targets, twice.targets, atol=1e-12)
        assert np.allclose(once.windows, twice.windows, atol=1e-12)
        assert abs(std2.target_mean) < 1e-12 and abs(std2.target_std - 1) < 1e-12

    def test_constant_target_rejected(self):
        traj = Trajectory(np.arange(4.0), np.ones((4, 1)))
        ts = window_dataset([traj], 0, 2, 2)
        with pytest.raises(DataError, match="variance"):
            standardize(ts)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_identity(self, ys):
        ys = np.asarray(ys)
        if ys.std() == 0:
            ys = ys + np.arange(len(ys))
        std = Standardizer(float(ys.mean()), float(ys.std()), 1.0, np.zeros(1), np.ones(1))
        back = std.destandardize_targets(std.standardize_targets(ys))
        assert np.max(np.abs(back - ys)) < 1e-10

    def test_serialization_roundtrip(self):
        std = Standardizer(1.5, 2.5, 96.0, np.array([0.1, 0.2]), np.array([1.1, 1.2]))
        back = Standardizer.from_json(std.to_json())
        assert back.target_mean == std.target_mean and back.target_std == std.target_std
        assert back.time_scale == std.time_scale
        assert np.array_equal(back.state_means, std.state_means)
        assert np.array_equal(back.state_stds, std.state_stds)

    def test_apply_standardizer_matches(self, pp_small_set):
        std = pp_small_set.standardizer
        y = pp_small_set.targets
        assert np.allclose(std.standardize_targets(std.destandardize_targets(y)), y)
