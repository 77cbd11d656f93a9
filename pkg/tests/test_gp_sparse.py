import numpy as np
import pytest

from koopgp import (
    default_config,
    fit_exact,
    init_sparse,
    nll,
    predict,
    sparse_loss,
    sparse_predict,
    train_sparse,
)
from koopgp import _engine
from koopgp.gp_exact import jittered_cholesky
from koopgp.gp_sparse import SparseState, kl_divergence, _concat
from koopgp.kernels import pack_inputs


def exact_posterior_state(training, cfg):
    """SparseState at M=N with m, S equal to the exact posterior."""
    from koopgp.gp_exact import posterior_covariance

    model = fit_exact(training, cfg)
    mean, cov = posterior_covariance(model, training)
    chol_s, _ = jittered_cholesky(cov, rel_start=1e-10)
    pack = pack_inputs(cfg, training)
    return SparseState(
        cfg,
        training.standardizer,
        pack.windows[pack.win_idx],
        training.times.copy(),
        mean,
        chol_s,
    )


class TestInit:
    def test_m_equals_n_matches_exact_posterior(self, pp_tiny_set):
        n = pp_tiny_set.n_pairs
        state = init_sparse(pp_tiny_set, n, seed=0, kind="kesd", n_eigenvalues=6, pre_budget=5)
        from koopgp.gp_exact import posterior_covariance

        model = fit_exact(pp_tiny_set, state.cfg)
        mean, _ = posterior_covariance(model, pp_tiny_set)
        assert len(state.m) == n
        # inducing points are a permutation of the training pairs
        assert np.allclose(np.sort(state.m), np.sort(mean), atol=1e-8)

    def test_determinism(self, pp_small_set):
        a = init_sparse(pp_small_set, 5, seed=9, n_eigenvalues=4, pre_budget=3)
        b = init_sparse(pp_small_set, 5, seed=9, n_eigenvalues=4, pre_budget=3)
        assert np.array_equal(a.inducing_windows, b.inducing_windows)
        assert np.array_equal(a.inducing_times, b.inducing_times)
        assert np.array_equal(a.m, b.m)

    def test_init_covariance_psd(self, pp_small_set):
        state = init_sparse(pp_small_set, 6, seed=1, n_eigenvalues=4, pre_budget=3)
        s = state.s
        assert np.linalg.eigvalsh(s)[0] >= -1e-8 * np.trace(s)

    def test_m_too_large_rejected(self, pp_small_set):
        with pytest.raises(ValueError, match="n_inducing"):
            init_sparse(pp_small_set, pp_small_set.n_pairs + 1, seed=0)


class TestPredict:
    def test_prior_recovery(self, pp_small_set):
        state = init_sparse(pp_small_set, 6, seed=2, n_eigenvalues=5, pre_budget=3)
        kstate = _engine.build_state(state.cfg)
        k_uu = _engine.gram(kstate, state.inducing_pack())
        l, _ = jittered_cholesky(k_uu)
        state.m = np.zeros_like(state.m)
        state.chol_s = l
        queries = pp_small_set.subset(np.arange(8))
        fc = sparse_predict(state, queries, destandardize=False)
        prior_var = _engine.diag(kstate, pack_inputs(state.cfg, queries))
        assert np.allclose(fc.mean, 0.0, atol=1e-10)
        assert np.allclose(fc.variance, prior_var, atol=1e-8)

    def test_m_equals_n_matches_exact(self, pp_tiny_set):
        cfg = default_config(pp_tiny_set, "kesd", 6, seed=3).replace(noise_var=0.4)
        state = exact_posterior_state(pp_tiny_set, cfg)
        fc_sparse = sparse_predict(state, pp_tiny_set, destandardize=False)
        fc_exact = predict(fit_exact(pp_tiny_set, cfg), pp_tiny_set, destandardize=False)
        assert np.allclose(fc_sparse.mean, fc_exact.mean, atol=1e-6)
        assert np.allclose(fc_sparse.variance, fc_exact.variance, atol=1e-6)

    def test_far_query_returns_prior_variance(self, pp_small_set):
        state = init_sparse(pp_small_set, 5, seed=4, n_eigenvalues=4, pre_budget=3)
        far = pp_small_set.subset(np.arange(4))
        far = type(far)(
            far.window_grid,
            far.windows + 80.0,  # far from every inducing window
            far.pair_window,
            far.times,
            far.targets,
            far.standardizer,
        )
        kstate = _engine.build_state(state.cfg)
        fc = sparse_predict(state, far, destandardize=False)
        prior_var = _engine.diag(kstate, pack_inputs(state.cfg, far))
        assert np.allclose(fc.variance, prior_var, rtol=1e-6, atol=1e-10)


class TestLoss:
    def test_kl_zero_at_prior(self, pp_small_set):
        state = init_sparse(pp_small_set, 5, seed=5, n_eigenvalues=4, pre_budget=3)
        kstate = _engine.build_state(state.cfg)
        k_uu = _engine.gram(kstate, state.inducing_pack())
        l, jit = jittered_cholesky(k_uu)
        state.m = np.zeros_like(state.m)
        state.chol_s = l
        assert kl_divergence(state) == pytest.approx(0.0, abs=1e-6)

    def test_kl_nonnegative(self, pp_small_set):
        rng = np.random.default_rng(0)
        for seed in range(4):
            state = init_sparse(pp_small_set, 5, seed=seed, n_eigenvalues=4, pre_budget=3)
            state.m = state.m + rng.normal(0, 0.5, len(state.m))
            state.chol_s = state.chol_s + np.tril(rng.normal(0, 0.1, state.chol_s.shape))
            assert kl_divergence(state) >= -1e-9

    @pytest.mark.parametrize("noise", [1.0, 0.37])
    def test_loss_equals_nll_at_m_equals_n(self, pp_tiny_set, noise):
        # the bound is tight at the exact posterior with all pairs inducing;
        # noise != 1 exercises the 1/sigma^2 weighting of every data term
        cfg = default_config(pp_tiny_set, "kesd", 6, seed=3).replace(noise_var=noise)
        state = exact_posterior_state(pp_tiny_set, cfg)
        sub = pp_tiny_set.subset(np.arange(10))
        cfg10 = cfg
        state10 = exact_posterior_state(sub, cfg10)
        loss = sparse_loss(state10, sub)
        exact = nll(sub, cfg10)
        assert loss == pytest.approx(exact, abs=1e-4)

    def test_batch_scaling_unbiased(self, pp_small_set):
        state = init_sparse(pp_small_set, 5, seed=6, n_eigenvalues=4, pre_budget=3)
        n = pp_small_set.n_pairs
        full = sparse_loss(state, pp_small_set)
        rng = np.random.default_rng(1)
        draws = []
        for _ in range(200):
            idx = rng.choice(n, 12, replace=False)
            draws.append(sparse_loss(state, pp_small_set.subset(idx), full_size=n))
        draws = np.asarray(draws)
        se = draws.std() / np.sqrt(len(draws))
        assert abs(draws.mean() - full) <= 4.0 * se


class TestTraining:
    def test_single_step_pipeline(self, pp_small_set):
        state = train_sparse(
            pp_small_set, n_inducing=4, budgets=(1, 1, 1), seed=7,
            batch_size=8, n_eigenvalues=4, pre_budget=3,
        )
        assert isinstance(state, SparseState)
        assert np.all(np.isfinite(state.m))

    def test_final_loss_not_worse(self, pp_small_set):
        # the contract holds against train_sparse's own initial state,
        # which is built on the 90% main split
        n_val = max(1, int(0.1 * pp_small_set.n_pairs))
        main = pp_small_set.subset(np.arange(pp_small_set.n_pairs - n_val))
        init_state = init_sparse(main, 5, seed=8, n_eigenvalues=4, pre_budget=3)
        initial = sparse_loss(init_state, pp_small_set)
        trained = train_sparse(
            pp_small_set, n_inducing=5, budgets=(15, 15, 10), seed=8,
            batch_size=16, n_eigenvalues=4, pre_budget=3,
        )
        final = sparse_loss(trained, pp_small_set)
        assert final <= initial + 1e-9

    def test_s_stays_psd(self, pp_small_set):
        trained = train_sparse(
            pp_small_set, n_inducing=5, budgets=(10, 10, 5), seed=9,
            batch_size=16, n_eigenvalues=4, pre_budget=3,
        )
        s = trained.s
        assert np.linalg.eigvalsh(s)[0] >= -1e-8 * np.trace(s)

    @staticmethod
    def _main_split(ts):
        # replicate train_sparse's automatic validation split
        n_val = max(1, int(0.1 * ts.n_pairs))
        return ts.subset(np.arange(ts.n_pairs - n_val))

    def test_spectral_inducing_times_frozen(self, pp_small_set):
        main = self._main_split(pp_small_set)
        init_state = init_sparse(main, 5, seed=10, n_eigenvalues=4, pre_budget=3)
        trained = train_sparse(
            pp_small_set, n_inducing=5, budgets=(5, 25, 5), seed=10,
            batch_size=16, n_eigenvalues=4, pre_budget=3, learning_rate=0.05,
        )
        assert np.array_equal(trained.inducing_times, init_state.inducing_times)
        # states did move in phase 2
        assert not np.allclose(trained.inducing_windows, init_state.inducing_windows)

    def test_contextual_inducing_times_move(self, pp_small_set):
        main = self._main_split(pp_small_set)
        init_state = init_sparse(main, 5, seed=11, kind="contextual", pre_budget=3)
        trained = train_sparse(
            pp_small_set, n_inducing=5, budgets=(5, 25, 5), seed=11,
            batch_size=16, kind="contextual", pre_budget=3, learning_rate=0.05,
        )
        assert not np.array_equal(trained.inducing_times, init_state.inducing_times)

    def test_explicit_validation_union(self, pp_small_set):
        train = pp_small_set.subset(np.arange(0, 60))
        val = pp_small_set.subset(np.arange(60, 80))
        state = train_sparse(
            train, val, n_inducing=4, budgets=(3, 3, 3), seed=12,
            batch_size=8, n_eigenvalues=4, pre_budget=3,
        )
        assert isinstance(state, SparseState)
        union = _concat(train, val)
        assert union.n_pairs == 80

    def test_serialization_roundtrip(self, pp_small_set):
        state = init_sparse(pp_small_set, 4, seed=13, n_eigenvalues=4, pre_budget=3)
        back = SparseState.from_dict(state.to_dict())
        assert np.allclose(back.m, state.m)
        assert np.allclose(back.chol_s, state.chol_s)
        assert np.allclose(back.inducing_windows, state.inducing_windows)
        fc_a = sparse_predict(state, pp_small_set.subset(np.arange(5)), destandardize=False)
        fc_b = sparse_predict(back, pp_small_set.subset(np.arange(5)), destandardize=False)
        assert np.allclose(fc_a.mean, fc_b.mean)
