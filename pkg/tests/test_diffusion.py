"""Schedule algebra, denoiser training, and the guided sampler."""

import numpy as np
import pytest

from sgds import diffusion as df
from sgds import worldsim as ws
from sgds.guidance import GuidanceWeights
from sgds.nnkit.mlp import ParamVector


class TestSchedule:
    def test_single_step(self):
        sched = df.make_schedule(1, 0.02, 0.02)
        assert sched.alpha_bar(1) == pytest.approx(0.98)

    def test_two_step_products(self):
        sched = df.make_schedule(2, 0.1, 0.2)
        np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.72], rtol=1e-15)

    def test_alpha_bars_strictly_decreasing(self):
        sched = df.make_schedule(50, 1e-4, 0.3)
        assert np.all(np.diff(sched.alpha_bars) < 0)
        assert np.all((sched.alpha_bars > 0) & (sched.alpha_bars <= 1))

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            df.make_schedule(10, 0.0, 0.1)
        with pytest.raises(ValueError):
            df.make_schedule(10, 0.2, 0.1)
        with pytest.raises(ValueError):
            df.make_schedule(10, 0.1, 1.0)
        with pytest.raises(ValueError):
            df.make_schedule(0, 0.1, 0.2)

    def test_t_bounds_checked(self):
        sched = df.make_schedule(10, 1e-4, 0.02)
        with pytest.raises(ValueError):
            sched.check_t(0)
        with pytest.raises(ValueError):
            sched.check_t(11)


class TestForwardNoise:
    def test_zero_noise(self):
        sched = df.make_schedule(2, 0.1, 0.2)
        x0 = np.linspace(-1, 1, 8)
        out = df.forward_noise(x0, 2, np.zeros(8), sched)
        np.testing.assert_allclose(out, np.sqrt(0.72) * x0, rtol=1e-15)

    def test_tiny_beta_keeps_data(self):
        sched = df.make_schedule(1, 1e-12, 1e-12)
        x0 = np.ones(4)
        out = df.forward_noise(x0, 1, np.ones(4), sched)
        np.testing.assert_allclose(out, x0, atol=1e-5)

    def test_hand_value_pure_noise(self):
        # abar = 0.9 * 0.8 = 0.72, so x_t = sqrt(0.28) on every entry
        sched = df.make_schedule(2, 0.1, 0.2)
        out = df.forward_noise(np.zeros(5), 2, np.ones(5), sched)
        np.testing.assert_allclose(out, np.sqrt(0.28), rtol=1e-15)

    def test_shape_mismatch(self):
        sched = df.make_schedule(2, 0.1, 0.2)
        with pytest.raises(ValueError):
            df.forward_noise(np.zeros(5), 1, np.zeros(4), sched)


class TestScoreEpsilon:
    SCHED = df.make_schedule(1, 0.25, 0.25)  # abar = 0.75

    def test_zero_noise_zero_score(self):
        assert np.array_equal(
            df.score_from_eps(np.zeros(6), 1, self.SCHED), np.zeros(6)
        )

    def test_hand_value(self):
        out = df.score_from_eps(np.ones(4), 1, self.SCHED)
        np.testing.assert_allclose(out, -2.0, rtol=1e-14)  # -1/sqrt(0.25)

    def test_round_trip(self):
        sched = df.make_schedule(30, 1e-4, 0.05)
        rng = np.random.default_rng(3)
        for t in (1, 7, 30):
            eps = rng.standard_normal(12)
            back = df.eps_from_score(df.score_from_eps(eps, t, sched), t, sched)
            np.testing.assert_allclose(back, eps, atol=1e-12)


class TestTweedie:
    def test_zero_eps_near_identity(self):
        sched = df.make_schedule(1, 1e-9, 1e-9)
        x = np.linspace(0, 1, 5)
        np.testing.assert_allclose(df.tweedie_x0(x, np.zeros(5), 1, sched), x, atol=1e-8)

    def test_exact_inversion_of_forward_noise(self):
        sched = df.make_schedule(40, 1e-4, 0.08)
        rng = np.random.default_rng(5)
        x0 = rng.uniform(-1, 1, 16)
        for t in (1, 20, 40):
            eps = rng.standard_normal(16)
            x_t = df.forward_noise(x0, t, eps, sched)
            np.testing.assert_allclose(df.tweedie_x0(x_t, eps, t, sched), x0, atol=1e-12)

    def test_hand_value(self):
        # abar = 0.81: (0.9 - sqrt(0.19)*0.5) / 0.9
        sched = df.make_schedule(1, 0.19, 0.19)
        out = df.tweedie_x0(0.9 * np.ones(3), 0.5 * np.ones(3), 1, sched)
        np.testing.assert_allclose(out, 0.7578389475810741, rtol=1e-12)


class TestSampleStep:
    SCHED = df.make_schedule(20, 1e-3, 0.05)

    def test_final_step_is_deterministic(self):
        x = np.random.default_rng(0).standard_normal(8)
        eps = np.random.default_rng(1).standard_normal(8)
        a = df.sample_step(x, eps, 1, self.SCHED, np.random.default_rng(2))
        b = df.sample_step(x, eps, 1, self.SCHED, np.random.default_rng(999))
        assert np.array_equal(a, b)

    def test_reproducible_with_fixed_rng(self):
        x = np.zeros(8)
        eps = np.ones(8)
        a = df.sample_step(x, eps, 5, self.SCHED, np.random.default_rng(7))
        b = df.sample_step(x, eps, 5, self.SCHED, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_small_beta_limit(self):
        sched = df.make_schedule(1, 1e-10, 1e-10)
        x = np.linspace(-1, 1, 6)
        out = df.sample_step(x, np.ones(6), 1, sched, np.random.default_rng(0))
        np.testing.assert_allclose(out, x, atol=1e-4)


def _tiny_world(n_episodes=6, chunks=3):
    cfg = ws.WorldConfig(pixels=12, frames_per_chunk=2)
    episodes = [
        ws.make_episode(cfg, seed, seed % 2, chunks * cfg.frames_per_chunk)
        for seed in range(n_episodes)
    ]
    return cfg, episodes


def _tiny_spec(cfg):
    return df.DenoiserSpec(
        chunk_dim=cfg.chunk_dim, conditions=cfg.conditions, cond_embed_dim=4,
        hidden=(16,),
    )


class TestPredictEps:
    def setup_method(self):
        self.cfg, self.episodes = _tiny_world()
        self.spec = _tiny_spec(self.cfg)
        self.sched = df.make_schedule(8, 1e-3, 0.1)
        self.params = df.init_denoiser(self.spec, 0)
        self.chunk = ws.chunk_episode(self.episodes[0], 2)[0].ravel()
        self.ctx = ws.chunk_episode(self.episodes[0], 2)[1].ravel()

    def test_deterministic_and_shaped(self):
        inp = df.DenoiserInput(x_t=self.chunk, t=3, context=self.ctx, condition=0)
        a = df.predict_eps(self.spec, self.params, inp, self.sched)
        b = df.predict_eps(self.spec, self.params, inp, self.sched)
        assert a.shape == (self.spec.chunk_dim,)
        assert np.array_equal(a, b)

    def test_null_context_uses_learned_token_not_zeros(self):
        null_inp = df.DenoiserInput(x_t=self.chunk, t=3, context=None, condition=0)
        zero_inp = df.DenoiserInput(
            x_t=self.chunk, t=3, context=np.zeros(self.spec.chunk_dim), condition=0
        )
        a = df.predict_eps(self.spec, self.params, null_inp, self.sched)
        b = df.predict_eps(self.spec, self.params, zero_inp, self.sched)
        assert not np.array_equal(a, b)

    def test_null_condition_differs_from_real(self):
        real = df.DenoiserInput(x_t=self.chunk, t=3, context=self.ctx, condition=1)
        null = df.DenoiserInput(x_t=self.chunk, t=3, context=self.ctx, condition=None)
        a = df.predict_eps(self.spec, self.params, real, self.sched)
        b = df.predict_eps(self.spec, self.params, null, self.sched)
        assert not np.array_equal(a, b)

    def test_bad_shapes(self):
        with pytest.raises(ValueError):
            df.predict_eps(
                self.spec,
                self.params,
                df.DenoiserInput(x_t=self.chunk[:-1], t=3, context=None, condition=0),
                self.sched,
            )
        with pytest.raises(ValueError):
            df.predict_eps(
                self.spec,
                self.params,
                df.DenoiserInput(x_t=self.chunk, t=3, context=None, condition=7),
                self.sched,
            )


class TestDsmLoss:
    def setup_method(self):
        self.cfg, self.episodes = _tiny_world()
        self.spec = _tiny_spec(self.cfg)
        self.sched = df.make_schedule(6, 1e-3, 0.1)
        self.pairs = df.training_pairs(self.episodes, 2)
        self.tc = df.TrainConfig(
            epochs=1, batch_size=4, learning_rate=1e-3, dropout_ctx=0.3,
            dropout_txt=0.3, seed=0,
        )

    def test_zero_network_loss_matches_noise_energy(self):
        """With eps_hat = 0 the loss must equal mean ||eps||^2 / dim for the
        exact noise the rng drew; replaying the draws is the oracle."""
        params = ParamVector(np.zeros(self.spec.num_params()), self.spec.manifest())
        batch = self.pairs[:4]
        loss, _ = df.dsm_loss(self.spec, params, batch, self.sched, self.tc,
                              np.random.default_rng(42))
        rng = np.random.default_rng(42)
        rng.integers(1, self.sched.T + 1, size=4)
        eps = rng.standard_normal((4, self.spec.chunk_dim))
        expected = float((eps**2).sum() / eps.size)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_untrained_loss_near_one(self):
        params = df.init_denoiser(self.spec, 0)
        losses = [
            df.dsm_loss(self.spec, params, self.pairs[:8], self.sched, self.tc,
                        np.random.default_rng(k))[0]
            for k in range(20)
        ]
        assert 0.5 <= np.mean(losses) <= 1.5

    def test_gradient_matches_finite_differences(self):
        params = df.init_denoiser(self.spec, 1)
        batch = self.pairs[:2]

        def f(flat):
            p = ParamVector(flat, self.spec.manifest())
            return df.dsm_loss(self.spec, p, batch, self.sched, self.tc,
                               np.random.default_rng(7))

        from sgds.nnkit import grad_check

        assert grad_check(f, params.values, 1e-5) <= 1e-5

    def test_empty_batch_rejected(self):
        params = df.init_denoiser(self.spec, 0)
        with pytest.raises(ValueError):
            df.dsm_loss(self.spec, params, [], self.sched, self.tc,
                        np.random.default_rng(0))


class TestTrainDenoiser:
    def setup_method(self):
        self.cfg, self.episodes = _tiny_world()
        self.spec = _tiny_spec(self.cfg)
        self.sched = df.make_schedule(6, 1e-3, 0.1)

    def _config(self, epochs):
        return df.TrainConfig(
            epochs=epochs, batch_size=5, learning_rate=3e-3, dropout_ctx=0.1,
            dropout_txt=0.1, seed=4,
        )

    def test_zero_epochs_returns_init(self):
        params = df.train_denoiser(self.episodes, 2, self.spec, self.sched,
                                   self._config(0))
        assert np.array_equal(params.values, df.init_denoiser(self.spec, 4).values)

    def test_deterministic(self):
        a = df.train_denoiser(self.episodes, 2, self.spec, self.sched, self._config(3))
        b = df.train_denoiser(self.episodes, 2, self.spec, self.sched, self._config(3))
        assert np.array_equal(a.values, b.values)

    def test_loss_decreases(self):
        tc = self._config(30)
        trained = df.train_denoiser(self.episodes, 2, self.spec, self.sched, tc)
        init = df.init_denoiser(self.spec, 4)
        pairs = df.training_pairs(self.episodes, 2)
        loss_init = np.mean([
            df.dsm_loss(self.spec, init, pairs, self.sched, tc,
                        np.random.default_rng(k))[0] for k in range(10)
        ])
        loss_trained = np.mean([
            df.dsm_loss(self.spec, trained, pairs, self.sched, tc,
                        np.random.default_rng(k))[0] for k in range(10)
        ])
        assert loss_trained < loss_init


class TestGuidedSampler:
    def setup_method(self):
        self.cfg, self.episodes = _tiny_world()
        self.spec = _tiny_spec(self.cfg)
        self.sched = df.make_schedule(8, 1e-3, 0.1)
        self.params = df.init_denoiser(self.spec, 0)
        self.context = ws.chunk_episode(self.episodes[0], 2)[0]

    def _conditional_only_reference(self, rng):
        """Sampler that never touches the unconditional or context branches."""
        x = rng.standard_normal(self.spec.chunk_dim)
        ctx = self.context.ravel()
        for t in range(self.sched.T, 0, -1):
            eps, _ = df._predict_eps_and_input(
                self.spec, self.params, x, ctx, 0, t, self.sched
            )
            x = df.sample_step(x, eps, t, self.sched, rng)
        return x.reshape(self.context.shape)

    def test_conditional_reduction_is_bit_exact(self):
        weights = GuidanceWeights(1.0, 1.0, 0.0)
        out = df.generate_chunk(
            self.spec, self.params, self.context, 0, weights, self.sched,
            np.random.default_rng(33),
        )
        ref = self._conditional_only_reference(np.random.default_rng(33))
        assert out.tobytes() == ref.tobytes()

    def test_zero_surprise_weight_never_calls_gradient(self):
        calls = []

        def counting_grad(ctx, cand):
            calls.append(1)
            return np.zeros_like(cand)

        df.generate_chunk(
            self.spec, self.params, self.context, 0,
            GuidanceWeights(1.5, 2.0, 0.0), self.sched,
            np.random.default_rng(1), surprise_grad_fn=counting_grad,
        )
        assert calls == []

    def test_surprise_gradient_called_each_step(self):
        calls = []

        def counting_grad(ctx, cand):
            calls.append(cand.shape)
            return np.zeros_like(cand)

        df.generate_chunk(
            self.spec, self.params, self.context, 0,
            GuidanceWeights(1.5, 2.0, 0.5), self.sched,
            np.random.default_rng(1), surprise_grad_fn=counting_grad,
        )
        assert len(calls) == self.sched.T
        assert all(shape == self.context.shape for shape in calls)

    def test_guidance_start_step_restricts_calls(self):
        calls = []

        def counting_grad(ctx, cand):
            calls.append(1)
            return np.zeros_like(cand)

        df.generate_chunk(
            self.spec, self.params, self.context, 0,
            GuidanceWeights(1.5, 2.0, 0.5), self.sched,
            np.random.default_rng(1), surprise_grad_fn=counting_grad,
            guidance_start_step=3,
        )
        assert len(calls) == 3

    def test_omega_s_requires_gradient_fn(self):
        with pytest.raises(ValueError, match="surprise_grad_fn"):
            df.generate_chunk(
                self.spec, self.params, self.context, 0,
                GuidanceWeights(1.5, 2.0, 0.5), self.sched,
                np.random.default_rng(1),
            )

    def test_zero_gradient_matches_unguided(self):
        """A surprise field that is identically zero must not disturb the
        trajectory (same rng draws, same composition)."""
        weights_on = GuidanceWeights(1.5, 2.0, 0.5)
        weights_off = GuidanceWeights(1.5, 2.0, 0.0)
        guided = df.generate_chunk(
            self.spec, self.params, self.context, 0, weights_on, self.sched,
            np.random.default_rng(8),
            surprise_grad_fn=lambda ctx, cand: np.zeros_like(cand),
            surprise_input="xt",
        )
        plain = df.generate_chunk(
            self.spec, self.params, self.context, 0, weights_off, self.sched,
            np.random.default_rng(8),
        )
        np.testing.assert_allclose(guided, plain, atol=1e-12)

    def test_sequence_wiring_feeds_outputs_forward(self):
        contexts_seen = []

        def recording_grad(ctx, cand):
            contexts_seen.append(np.asarray(ctx).copy())
            return np.zeros_like(cand)

        chunks = df.generate_sequence(
            self.spec, self.params, self.context, 0, 3,
            GuidanceWeights(1.5, 2.0, 0.5), self.sched,
            np.random.default_rng(5), surprise_grad_fn=recording_grad,
            surprise_input="xt",
        )
        assert len(chunks) == 3
        per_chunk = self.sched.T
        np.testing.assert_array_equal(contexts_seen[0], self.context)
        np.testing.assert_array_equal(contexts_seen[per_chunk], chunks[0])
        np.testing.assert_array_equal(contexts_seen[2 * per_chunk], chunks[1])

    def test_sequence_length_validation(self):
        with pytest.raises(ValueError):
            df.generate_sequence(
                self.spec, self.params, self.context, 0, 0,
                GuidanceWeights(1.0, 1.0, 0.0), self.sched,
                np.random.default_rng(0),
            )

    def test_single_chunk_equals_generate_chunk(self):
        weights = GuidanceWeights(1.0, 1.0, 0.0)
        seq = df.generate_sequence(
            self.spec, self.params, self.context, 0, 1, weights, self.sched,
            np.random.default_rng(12),
        )
        direct = df.generate_chunk(
            self.spec, self.params, self.context, 0, weights, self.sched,
            np.random.default_rng(12),
        )
        assert len(seq) == 1
        assert np.array_equal(seq[0], direct)

    def test_reproducible(self):
        weights = GuidanceWeights(1.5, 2.0, 0.0)
        a = df.generate_chunk(
            self.spec, self.params, self.context, 1, weights, self.sched,
            np.random.default_rng(77),
        )
        b = df.generate_chunk(
            self.spec, self.params, self.context, 1, weights, self.sched,
            np.random.default_rng(77),
        )
        assert np.array_equal(a, b)


def test_training_pairs_layout():
    cfg, episodes = _tiny_world(n_episodes=2, chunks=4)
    pairs = df.training_pairs(episodes, 2)
    # 3 pairs per 4-chunk episode
    assert len(pairs) == 6
    chunks0 = ws.chunk_episode(episodes[0], 2)
    np.testing.assert_array_equal(pairs[0][0], chunks0[1].ravel())
    np.testing.assert_array_equal(pairs[0][1], chunks0[0].ravel())
    assert pairs[0][2] == episodes[0].condition


def test_train_config_validation():
    with pytest.raises(ValueError):
        df.TrainConfig(epochs=-1, batch_size=1, learning_rate=1e-3)
    with pytest.raises(ValueError):
        df.TrainConfig(epochs=1, batch_size=0, learning_rate=1e-3)
    with pytest.raises(ValueError):
        df.TrainConfig(epochs=1, batch_size=1, learning_rate=0.0)
    with pytest.raises(ValueError):
        df.TrainConfig(epochs=1, batch_size=1, learning_rate=1e-3, dropout_ctx=1.0)
