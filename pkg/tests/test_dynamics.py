import numpy as np
import pytest

from koopgp import (
    linear2d_rhs,
    linear2d_system,
    make_corpus,
    predator_prey_printed_rhs,
    predator_prey_rhs,
    predator_prey_system,
    simulate,
)
from koopgp.backend import set_backend
from koopgp.dynamics import BlowupError, predator_prey_printed_system


class TestRhs:
    def test_pp_fixed_point(self):
        assert np.allclose(predator_prey_rhs([0.0, 0.0]), [0.0, 0.0])

    def test_pp_unit_point(self):
        # r1*1 - c*g1*1*1 = 0.2 - 0.8, -r2*1 + c*g2*1*1 = -0.25 + 0.4
        assert np.allclose(predator_prey_rhs([1.0, 1.0]), [-0.6, 0.15])

    def test_pp_printed_form_is_different(self):
        assert np.allclose(predator_prey_printed_rhs([1.0, 1.0]), [0.2 + 0.8, 0.25 + 0.4])

    def test_linear_unit(self):
        assert np.allclose(linear2d_rhs([1.0, 0.0]), [0.0, 6.0])

    def test_linear_eigenvalues(self):
        a = np.array([[0.0, -6.0], [6.0, 0.0]])
        eig = np.linalg.eigvals(a)
        assert np.allclose(sorted(eig.imag), [-6.0, 6.0]) and np.allclose(eig.real, 0.0)

    def test_linear_norm_conserved(self):
        traj = simulate(linear2d_system(), [0.3, 0.8], 0.1, 50)
        norms = np.linalg.norm(traj.states, axis=1)
        assert np.allclose(norms, norms[0], atol=1e-8)


class TestSimulate:
    def test_rotation_closed_form(self):
        traj = simulate(linear2d_system(), [1.0, 0.0], np.pi / 6.0, 1)
        assert np.allclose(traj.states[-1], [-1.0, 0.0], atol=1e-6)

    def test_length_contract(self):
        traj = simulate(predator_prey_system(), [1.0, 0.5], 0.5, 1)
        assert len(traj) == 2

    def test_pp_table_grid_shape(self):
        traj = simulate(predator_prey_system(), [1.3, 0.4], 3.0, 64)
        assert len(traj) == 65 and np.all(np.isfinite(traj.states))

    def test_pp_bounded_oscillation(self):
        # reference integrator at a much finer substep agrees and stays bounded
        traj = simulate(predator_prey_system(), [1.0, 0.5], 3.0, 64)
        ref = simulate(predator_prey_system(), [1.0, 0.5], 3.0, 64, max_substep=1e-3)
        assert np.max(np.linalg.norm(traj.states, axis=1)) < 10.0
        assert np.allclose(traj.states, ref.states, atol=1e-6)
        x1 = traj.states[:, 0]
        assert ((x1[1:] - x1[:-1]) > 0).any() and ((x1[1:] - x1[:-1]) < 0).any()

    def test_rk4_order(self):
        sys2 = linear2d_system()
        errs = []
        for h in (0.02, 0.01, 0.005):
            traj = simulate(sys2, [1.0, 0.0], 1.0, 1, max_substep=h)
            exact = np.array([np.cos(6.0), np.sin(6.0)])
            errs.append(np.linalg.norm(traj.states[-1] - exact))
        assert errs[0] / errs[1] >= 8.0 and errs[1] / errs[2] >= 8.0

    def test_lv_first_integral(self):
        p = dict(r1=0.2, g1=0.4, r2=0.25, g2=0.2, c=2.0)
        traj = simulate(predator_prey_system(), [1.0, 0.5], 3.0, 64)
        x1, x2 = traj.states[:, 0], traj.states[:, 1]
        v = p["c"] * p["g2"] * x1 - p["r2"] * np.log(x1) + p["c"] * p["g1"] * x2 - p["r1"] * np.log(x2)
        assert np.max(np.abs(v - v[0])) < 1e-3

    def test_printed_form_diverges_from_classical(self):
        # the literal printed equations are non-oscillatory: x1 grows monotonically
        traj = simulate(predator_prey_printed_system(), [0.5, 0.5], 0.1, 12)
        assert np.all(np.diff(traj.states[:, 0]) > 0)

    def test_blowup_reported(self):
        with pytest.raises(BlowupError, match="t="):
            simulate(predator_prey_printed_system(), [2.0, 1.0], 3.0, 64)


class TestCorpus:
    def test_determinism(self):
        a = make_corpus(predator_prey_system(), 3, [[0, 2], [0, 1]], 3.0, 8, seed=9)
        b = make_corpus(predator_prey_system(), 3, [[0, 2], [0, 1]], 3.0, 8, seed=9)
        for ta, tb in zip(a, b):
            assert np.array_equal(ta.states, tb.states)

    def test_empty(self):
        assert make_corpus(linear2d_system(), 0, [[0, 1], [0, 1]], 0.1, 4) == []

    def test_noise_std_matches(self):
        clean = make_corpus(linear2d_system(), 40, [[0, 1], [0, 1]], 0.05, 20, seed=2)
        noisy = make_corpus(linear2d_system(), 40, [[0, 1], [0, 1]], 0.05, 20, seed=2, noise_std=0.1)
        diff = np.concatenate([(n.states - c.states).ravel() for n, c in zip(noisy, clean)])
        assert diff.std() == pytest.approx(0.1, abs=0.02)

    def test_box_respected(self):
        corpus = make_corpus(linear2d_system(), 20, [[0.5, 0.6], [-1.0, -0.9]], 0.1, 1, seed=0)
        x0 = np.array([t.states[0] for t in corpus])
        assert np.all(x0[:, 0] >= 0.5) and np.all(x0[:, 0] <= 0.6)
        assert np.all(x0[:, 1] >= -1.0) and np.all(x0[:, 1] <= -0.9)


@pytest.mark.parametrize("system", ["linear2d", "predator_prey"])
def test_backends_agree(system):
    pytest.importorskip("numba")
    from koopgp import system_by_name

    sys_ = system_by_name(system)
    x0 = [[0.7, 0.4], [1.1, 0.2]]
    set_backend("numpy")
    try:
        a = [simulate(sys_, x, 0.5, 6) for x in x0]
    finally:
        set_backend("auto")
    set_backend("numba")
    try:
        b = [simulate(sys_, x, 0.5, 6) for x in x0]
    finally:
        set_backend("auto")
    for ta, tb in zip(a, b):
        assert np.allclose(ta.states, tb.states, rtol=1e-13, atol=1e-13)
