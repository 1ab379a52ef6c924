import numpy as np
import pytest

from rwrelab.env import EnvironmentView, local_drift
from rwrelab.errors import ResourceError, UsageError
from rwrelab.walk import (
    Trajectory,
    check_steps,
    martingale_part,
    quenched_mean,
    read_trajectory_binary,
    replica_seeds,
    simulate_annealed,
    simulate_checkpoints,
    simulate_quenched,
    step_drifts,
    visited_kernels,
    write_trajectory_binary,
    write_trajectory_text,
)


class TestSimulation:
    def test_starts_at_origin_and_respects_range(self, dirichlet2d):
        traj = simulate_quenched(EnvironmentView(dirichlet2d), 500, walk_seed=3)
        assert traj.positions.shape == (501, 2)
        assert np.all(traj.positions[0] == 0)
        assert np.all(np.abs(traj.steps()).sum(axis=1) == 1)

    def test_same_seed_same_path(self, dirichlet):
        env = EnvironmentView(dirichlet)
        a = simulate_quenched(env, 300, walk_seed=42)
        b = simulate_quenched(env, 300, walk_seed=42)
        c = simulate_quenched(env, 300, walk_seed=43)
        assert np.array_equal(a.positions, b.positions)
        assert not np.array_equal(a.positions, c.positions)

    def test_prefix_property(self, period2):
        env = EnvironmentView(period2)
        short = simulate_quenched(env, 100, walk_seed=9)
        long = simulate_quenched(env, 1000, walk_seed=9)
        assert np.array_equal(short.positions, long.positions[:101])

    def test_negative_steps(self, srw1):
        with pytest.raises(UsageError):
            simulate_quenched(EnvironmentView(srw1), -1, walk_seed=0)

    def test_annealed_uses_derived_seeds(self, dirichlet):
        traj = simulate_annealed(dirichlet, 50, master_seed=5, replica_index=2)
        env_seed, walk_seed = replica_seeds(5, 2)
        assert traj.spec.seed == env_seed
        assert traj.walk_seed == walk_seed
        assert replica_seeds(5, 2) != replica_seeds(5, 3)

    @pytest.mark.parametrize("model", ["period2", "deterministic", "dirichlet", "srw2"])
    def test_checkpoints_match_full_paths(self, model, request):
        spec = request.getfixturevalue(model)
        checks = [0, 7, 100, 250]
        out = simulate_checkpoints(spec, checks, master_seed=11, replica_indices=[0, 3, 4])
        for r, idx in enumerate([0, 3, 4]):
            full = simulate_annealed(spec, 250, 11, idx).positions
            assert np.array_equal(out[r], full[checks])

    def test_checkpoints_must_increase(self, srw1):
        with pytest.raises(UsageError):
            simulate_checkpoints(srw1, [10, 10], 0, [0])

    def test_drift_of_deterministic_walk(self, deterministic):
        ends = simulate_checkpoints(deterministic, [2000], 0, range(200))[:, 0, 0] / 2000
        se = ends.std(ddof=1) / np.sqrt(len(ends))
        assert abs(ends.mean() - 0.4) <= 4 * se


class TestQuenchedMean:
    def test_deterministic_is_linear(self, deterministic):
        qm = quenched_mean(EnvironmentView(deterministic), 200)
        assert np.allclose(qm.means[:, 0], 0.4 * np.arange(201), atol=1e-9)

    def test_period2_oscillates(self, period2):
        qm = quenched_mean(EnvironmentView(period2), 11)
        dev = qm.means[:, 0] - 0.2 * np.arange(12)
        assert np.allclose(dev[0::2], 0.0, atol=1e-12)
        assert np.allclose(dev[1::2], 0.4, atol=1e-12)

    def test_matches_sample_mean(self, dirichlet):
        env = EnvironmentView(dirichlet)
        qm = quenched_mean(env, 60)
        ends = np.array([simulate_quenched(env, 60, s).positions[-1, 0] for s in range(400)])
        se = ends.std(ddof=1) / np.sqrt(len(ends))
        assert abs(ends.mean() - qm.means[-1, 0]) <= 4 * se

    def test_site_budget(self, dirichlet2d):
        with pytest.raises(ResourceError):
            quenched_mean(EnvironmentView(dirichlet2d), 1000, max_sites=10_000)


class TestMartingalePart:
    def test_reconstructs_positions(self, dirichlet):
        traj = simulate_annealed(dirichlet, 400, 1, 0)
        w = martingale_part(traj)
        drifts = step_drifts(traj)
        assert np.allclose(w[1:] + np.cumsum(drifts, axis=0), traj.positions[1:], atol=1e-9)

    def test_balanced_walk_is_its_own_martingale(self, balanced):
        traj = simulate_annealed(balanced, 300, 2, 1)
        assert np.allclose(martingale_part(traj), traj.positions, atol=1e-12)

    def test_step_drifts_follow_sites(self, period2):
        traj = simulate_annealed(period2, 20, 0, 0)
        env = traj.env_view()
        expected = np.array([local_drift(env, x) for x in traj.positions[:-1]])
        assert np.allclose(step_drifts(traj), expected)

    def test_foreign_path_rejected(self, period2, deterministic):
        traj = simulate_annealed(deterministic, 50, 0, 0)
        forged = Trajectory(traj.positions * 2, period2, (0,), traj.walk_seed)
        kernels, inverse = visited_kernels(forged)
        with pytest.raises(UsageError):
            check_steps(forged, kernels, inverse)


class TestExport:
    def test_binary_frame(self, tmp_path, dirichlet2d):
        traj = simulate_annealed(dirichlet2d, 64, 4, 1)
        path = write_trajectory_binary(traj, tmp_path / "walk.bin")
        header, positions = read_trajectory_binary(path)
        assert path.read_bytes()[:4] == b"RWRT"
        assert header["n"] == 64
        assert header["dim"] == 2
        assert header["env_seed"] == traj.spec.seed
        assert np.array_equal(positions, traj.positions)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(UsageError):
            read_trajectory_binary(path)

    def test_text(self, tmp_path, srw1):
        traj = simulate_annealed(srw1, 10, 0, 0)
        path = write_trajectory_text(traj, tmp_path / "walk.txt")
        data = np.loadtxt(path, dtype=np.int64)
        assert data.shape == (11, 2)
        assert np.array_equal(data[:, 1], traj.positions[:, 0])
