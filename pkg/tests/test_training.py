import numpy as np
import pytest

from ssgn.hsi_core import synthetic_cube
from ssgn.model import init_model
from ssgn.noise import NoiseCase, NoiseSpec
from ssgn.tensor import check_gradients
from ssgn.training import (
    AdamState,
    ConfigError,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    desk_profile,
    format_config,
    lr_at_epoch,
    parse_config,
    sample_batch,
    spatial_spectral_loss,
    train,
)


class TestLoss:
    def test_perfect_prediction(self):
        res, phi = np.ones((2, 1, 3, 3)), np.ones((2, 4, 3, 3))
        loss, gr, gp = spatial_spectral_loss(res, phi, res, phi, 0.001)
        assert loss == 0.0 and not gr.any() and not gp.any()

    def test_unit_residual_error(self):
        # one 1x1 patch, residual off by 1, alpha 0 -> 0.5
        loss, _, _ = spatial_spectral_loss(np.ones((1, 1, 1, 1)), np.zeros((1, 2, 1, 1)),
                                           np.zeros((1, 1, 1, 1)), np.zeros((1, 2, 1, 1)), 0.0)
        assert loss == 0.5

    def test_alpha_one_ignores_residual(self):
        loss, gr, _ = spatial_spectral_loss(np.ones((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)),
                                            np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)), 1.0)
        assert loss == 0.0 and not gr.any()

    def test_linear_in_alpha(self):
        rng = np.random.default_rng(0)
        args = [rng.standard_normal(s) for s in [(3, 1, 4, 4), (3, 2, 4, 4), (3, 1, 4, 4), (3, 2, 4, 4)]]
        l0 = spatial_spectral_loss(*args, 0.0)[0]
        l1 = spatial_spectral_loss(*args, 1.0)[0]
        for a in (0.001, 0.3, 0.75):
            assert spatial_spectral_loss(*args, a)[0] == pytest.approx((1 - a) * l0 + a * l1, rel=1e-12)
            assert spatial_spectral_loss(*args, a)[0] >= 0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        res, phi = rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 4, 3, 3))
        rt, gt = rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 4, 3, 3))

        def f(res, phi):
            loss, gr, gp = spatial_spectral_loss(res, phi, rt, gt, 0.3)
            return loss, [gr, gp]

        assert check_gradients(f, [res, phi], step=1e-5, tolerance=1e-6).passed

    def test_bad_alpha(self):
        z = np.zeros((1, 1, 1, 1))
        with pytest.raises(ValueError):
            spatial_spectral_loss(z, z, z, z, 1.5)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = [np.array([1.0, -2.0])]
        state = AdamState.zeros_like(p)
        adam_step(p, [np.zeros(2)], state, 0.001)
        assert p[0].tolist() == [1.0, -2.0] and state.t == 1

    def test_first_step_size_is_lr(self):
        p = [np.array([0.0, 0.0])]
        adam_step(p, [np.array([5.0, -0.01])], AdamState.zeros_like(p), 0.001)
        np.testing.assert_allclose(p[0], [-0.001, 0.001], rtol=1e-4)

    def test_quadratic_converges(self):
        w = [np.array([1.0])]
        state = AdamState.zeros_like(w)
        for _ in range(100):
            adam_step(w, [w[0].copy()], state, 0.1)
        assert abs(w[0][0]) < 0.1

    def test_sign_of_update(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            g = rng.standard_normal(5)
            p = [np.zeros(5)]
            adam_step(p, [g], AdamState.zeros_like(p), 0.01)
            assert np.all(np.sign(p[0]) == -np.sign(g))

    def test_non_finite_gradient(self):
        p = [np.zeros(2)]
        with pytest.raises(TrainingDivergedError):
            adam_step(p, [np.array([np.nan, 0.0])], AdamState.zeros_like(p), 0.01)


class TestSchedule:
    def test_values(self):
        assert lr_at_epoch(0.001, 0.5, 10, 0) == 0.001
        assert lr_at_epoch(0.001, 0.5, 10, 9) == 0.001
        assert lr_at_epoch(0.001, 0.5, 10, 10) == 0.0005
        assert lr_at_epoch(0.001, 0.5, 10, 25) == 0.00025

    def test_non_increasing(self):
        lrs = [lr_at_epoch(0.001, 0.5, 10, e) for e in range(200)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


@pytest.fixture(scope="module")
def cube():
    return synthetic_cube(40, 40, 10, seed=3)


def _tiny(**kw):
    base = dict(K=4, blocks=1, c_scale=2, batch_size=4, batches_per_epoch=2, patch=12, stride=8, epochs=1)
    base.update(kw)
    return desk_profile(**base)


class TestSampling:
    def test_deterministic(self, cube):
        cfg = _tiny()
        a, b = sample_batch([cube], cfg, 3, 1), sample_batch([cube], cfg, 3, 1)
        for f in ("band", "spatial", "spectral", "res_target", "gz_target"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        c = sample_batch([cube], cfg, 3, 2)
        assert not np.array_equal(a.band, c.band)

    def test_shapes(self, cube):
        cfg = _tiny(batch_size=8, patch=25)
        batch = sample_batch([cube], cfg, 0, 0)
        assert batch.band.shape == (8, 1, 25, 25)
        assert batch.spatial.shape == (8, 2, 25, 25)
        assert batch.spectral.shape == (8, 4, 25, 25) and batch.gz_target.shape == (8, 4, 25, 25)
        assert len(batch.samples) == 8
        for s in batch.samples:
            assert len(s.window_band_indices) == 4 and s.band_index not in s.window_band_indices

    def test_zero_noise_zero_targets(self, cube):
        cfg = _tiny(noise=NoiseSpec(case=NoiseCase.GAUSSIAN, gaussian_sigma_range=(0, 0)))
        batch = sample_batch([cube], cfg, 0, 0)
        assert not batch.res_target.any()
        assert np.array_equal(batch.spectral, batch.gz_target)

    def test_residual_target_is_noisy_minus_clean(self, cube):
        batch = sample_batch([cube], _tiny(), 1, 0)
        for i, s in enumerate(batch.samples):
            np.testing.assert_allclose(batch.res_target[i, 0], s.noisy_patch - s.clean_patch, atol=1e-7)
            assert np.array_equal(batch.band[i, 0], s.noisy_patch)

    def test_too_few_bands(self):
        with pytest.raises(ValueError):
            sample_batch([synthetic_cube(20, 20, 4)], _tiny(), 0, 0)


class TestTrain:
    def test_zero_epochs_keeps_model(self, cube):
        cfg = _tiny(epochs=0)
        model, log = train([cube], cfg)
        ref = init_model(cfg.arch, cfg.seed)
        assert all(np.array_equal(a, b) for a, b in zip(model.parameters(), ref.parameters()))
        assert log.epochs == [] and log.to_text() == ""

    def test_deterministic(self, cube):
        cfg = _tiny(epochs=2)
        m1, l1 = train([cube], cfg)
        m2, l2 = train([cube], cfg)
        assert l1.batch_losses == l2.batch_losses
        assert all(np.array_equal(a, b) for a, b in zip(m1.parameters(), m2.parameters()))

    def test_log_format_and_schedule(self, cube):
        _, log = train([cube], _tiny(epochs=3, decay_every=2))
        lines = log.to_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("epoch 0 lr 0.001 loss ")
        assert [e.lr for e in log.epochs] == [0.001, 0.001, 0.0005]
        assert len(log.batch_losses) == 6

    def test_resume_continues_step_count(self, cube):
        cfg = _tiny(epochs=1)
        model, _ = train([cube], cfg)
        state = AdamState.zeros_like(model.parameters())
        train([cube], cfg, model=model, state=state)
        assert state.t == 2

    def test_callback(self, cube):
        seen = []
        train([cube], _tiny(), callback=lambda e, b, loss: seen.append((e, b)))
        assert seen == [(0, 0), (0, 1)]


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.alpha, cfg.lr0, cfg.lr_decay, cfg.decay_every, cfg.epochs) == (0.001, 0.001, 0.5, 10, 200)
        assert (cfg.K, cfg.blocks, cfg.c_scale, cfg.patch) == (24, 5, 10, 25)

    def test_parse_overrides(self):
        cfg = parse_config("profile = desk\n# comment\nalpha = 0.5  # trailing\nepochs=3\naugmentation = off\n"
                           "noise_case = 5\nnoise_sigma_high = 0.2\n")
        assert cfg.alpha == 0.5 and cfg.epochs == 3 and cfg.augmentation is False
        assert cfg.K == 4 and cfg.noise.case == NoiseCase.MIXTURE
        assert cfg.noise.gaussian_sigma_range == (0.04, 0.2)

    def test_roundtrip(self):
        cfg = desk_profile(alpha=0.25, seed=9)
        assert parse_config(format_config(cfg)) == cfg

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("alpha = 0.1\nbogus = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("epochs = many\n")
        with pytest.raises(ConfigError):
            parse_config("alpha = 2\n")

    def test_profile_must_come_first(self):
        with pytest.raises(ConfigError):
            parse_config("alpha = 0.1\nprofile = desk\n")
