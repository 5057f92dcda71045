"""Loss variants, the loss/score-map identity, and the lr schedule."""

import numpy as np
import pytest

from uniad.blocks import ConfigError
from uniad.model import map_to_tokens
from uniad.scoring import anomaly_score_map
from uniad.tensor import Tensor, use_dtype
from uniad.training import TrainConfig, lr_at_epoch, reconstruction_loss


def tokens(arr):
    return Tensor(map_to_tokens(np.asarray(arr, dtype=np.float64)))


class TestReconstructionLoss:
    def test_identical_inputs_zero_for_all_variants(self):
        f = np.random.default_rng(0).standard_normal((3, 4, 4)) + 1.0
        for variant in ("mse", "normalized_mse", "cosine"):
            loss = reconstruction_loss(tokens(f), tokens(f), variant)
            assert abs(loss.item()) < 1e-9, variant

    def test_unit_difference_example(self):
        # all-zero vs all-one, C=3, H=W=2: 12 unit squares / 4 positions = 3
        f_org = np.zeros((3, 2, 2))
        f_rec = np.ones((3, 2, 2))
        assert reconstruction_loss(tokens(f_org), tokens(f_rec), "mse").item() == 3.0

    def test_scaled_copy_vanishes_for_scale_free_variants(self):
        f = np.random.default_rng(1).standard_normal((5, 3, 3)) + 2.0
        for variant in ("normalized_mse", "cosine"):
            loss = reconstruction_loss(tokens(f), tokens(7.0 * f), variant)
            assert abs(loss.item()) < 1e-6, variant

    def test_mse_equals_mean_squared_score_map(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.standard_normal((6, 5, 4))
            b = rng.standard_normal((6, 5, 4))
            loss = reconstruction_loss(tokens(a), tokens(b), "mse").item()
            s = anomaly_score_map(a, b)
            assert abs(loss - (s ** 2).mean()) < 1e-6

    def test_batch_is_mean_of_per_sample_losses(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 6, 3, 3))
        b = rng.standard_normal((4, 6, 3, 3))
        batched = reconstruction_loss(Tensor(map_to_tokens(a)),
                                      Tensor(map_to_tokens(b)), "mse").item()
        singles = [reconstruction_loss(tokens(a[i]), tokens(b[i]), "mse").item()
                   for i in range(4)]
        assert abs(batched - np.mean(singles)) < 1e-9

    def test_variants_are_differentiable(self):
        rng = np.random.default_rng(4)
        for variant in ("mse", "normalized_mse", "cosine"):
            with use_dtype(np.float64):
                rec = Tensor(rng.standard_normal((1, 6, 4)), requires_grad=True)
                org = Tensor(rng.standard_normal((1, 6, 4)))
                reconstruction_loss(org, rec, variant).backward()
            assert rec.grad is not None and np.isfinite(rec.grad).all()

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            reconstruction_loss(tokens(np.zeros((1, 2, 2))),
                                tokens(np.zeros((1, 2, 2))), "l1")

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            reconstruction_loss(tokens(np.zeros((1, 2, 2))),
                                tokens(np.zeros((1, 2, 3))), "mse")


class TestSchedule:
    def test_drop_happens_after_configured_epoch(self):
        cfg = TrainConfig()  # lr 1e-4, drop after 800
        assert lr_at_epoch(cfg, 1) == pytest.approx(1e-4)
        assert lr_at_epoch(cfg, 800) == pytest.approx(1e-4)
        assert lr_at_epoch(cfg, 801) == pytest.approx(1e-5)
        assert lr_at_epoch(cfg, 1000) == pytest.approx(1e-5)

    def test_defaults_are_full_scale_recipe(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.lr, cfg.lr_drop_epoch) == (1000, 1e-4, 800)
        assert (cfg.lr_drop_factor, cfg.weight_decay) == (0.1, 1e-4)
        assert cfg.eval_every == 10

    def test_validation_rejects_nonsense(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(lr=-1.0).validate()
