"""Comparative experiment driver: structure and aggregation."""

import numpy as np
import pytest

from uniad.blocks import ConfigError
from uniad.dataio import SyntheticSpec, generate_synthetic_dataset, load_dataset
from uniad.experiment import (
    ComparativeReport,
    ExperimentConfig,
    RunTrace,
    desk_model_config,
    desk_train_config,
    shortcut_experiment,
)
from uniad.training import TrainConfig


@pytest.fixture(scope="module")
def micro_dataset(tmp_path_factory):
    spec = SyntheticSpec(n_classes=2, c_org=12, h=4, w=4, rank=2,
                         train_per_class=6, test_normal_per_class=3,
                         test_anomalous_per_class=3, patch_min=1, patch_max=2,
                         image_scale=2, noise_floor=0.1,
                         magnitude_min=1.0, magnitude_max=2.0)
    out = str(tmp_path_factory.mktemp("micro"))
    generate_synthetic_dataset(spec, seed=0, out_dir=out)
    return load_dataset(out)


def micro_train_cfg():
    return TrainConfig(epochs=4, lr=1e-3, batch_size=8, seed=0, eval_every=2,
                       pool_size=2)


class TestDriver:
    def test_one_trace_per_arch_regime_pair(self, micro_dataset):
        cfg = ExperimentConfig(archs=["mlp", "uniad"],
                               regimes=["unified", "separate"], seeds=[0],
                               train_cfg=micro_train_cfg())
        report = shortcut_experiment(micro_dataset, cfg)
        # unified: one run; separate: one per class
        for arch in cfg.archs:
            assert len(report.runs(arch, "unified")) == 1
            assert len(report.runs(arch, "separate")) == 2
        pairs = {(t.arch, t.regime) for t in report.traces}
        assert pairs == {("mlp", "unified"), ("mlp", "separate"),
                         ("uniad", "unified"), ("uniad", "separate")}

    def test_traces_carry_metrics_and_drops(self, micro_dataset):
        cfg = ExperimentConfig(archs=["uniad"], regimes=["unified"], seeds=[0, 1],
                               train_cfg=micro_train_cfg())
        report = shortcut_experiment(micro_dataset, cfg)
        assert len(report.traces) == 2
        for t in report.traces:
            assert t.final_det is not None
            assert t.peak_det >= t.final_det - 1e-12
            assert t.det_drop >= 0.0
            assert [e for e, _ in t.det_trace] == [2, 4]
        assert 0.0 <= report.mean_final_det("uniad", "unified") <= 1.0
        assert report.mean_det_drop("uniad", "unified") >= 0.0

    def test_unified_vs_separate_delta(self, micro_dataset):
        cfg = ExperimentConfig(archs=["mlp"], regimes=["unified", "separate"],
                               seeds=[0], train_cfg=micro_train_cfg())
        report = shortcut_experiment(micro_dataset, cfg)
        delta = report.unified_vs_separate_delta("mlp")
        want = (report.mean_final_det("mlp", "unified")
                - report.mean_final_det("mlp", "separate"))
        assert delta == want

    def test_keep_checkpoints_returns_them(self, micro_dataset):
        cfg = ExperimentConfig(archs=["mlp"], regimes=["unified"], seeds=[0],
                               train_cfg=micro_train_cfg())
        report, ckpts = shortcut_experiment(micro_dataset, cfg,
                                            keep_checkpoints=True)
        assert set(ckpts) == {("mlp", "unified", 0, None)}
        assert ckpts[("mlp", "unified", 0, None)].opt_state.step > 0

    def test_csv_rows_cover_every_epoch(self, micro_dataset):
        cfg = ExperimentConfig(archs=["mlp"], regimes=["unified"], seeds=[0],
                               train_cfg=micro_train_cfg())
        report = shortcut_experiment(micro_dataset, cfg)
        rows = report.csv_rows()
        assert len(rows) == 4  # one per epoch
        assert rows[1]["epoch"] == 2 and rows[1]["det_auroc"] != ""
        assert rows[0]["det_auroc"] == ""  # no eval at epoch 1

    def test_bad_arch_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(archs=["cnn"]).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(regimes=["mixed"]).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(seeds=[]).validate()

    def test_missing_regime_aggregation_raises(self):
        report = ComparativeReport(traces=[RunTrace(
            arch="mlp", regime="unified", seed=0, class_id=None,
            loss_trace=[], det_trace=[], loc_trace=[],
            final_det=None, final_loc=None)])
        with pytest.raises(ConfigError):
            report.mean_final_det("mlp", "unified")


class TestDeskConfigs:
    def test_desk_model_configs_validate(self):
        for arch in ("uniad", "vanilla_transformer", "mlp"):
            desk_model_config(arch, 32, 8, 8).validate()
            desk_model_config(arch, 12, 4, 4).validate()  # small-grid fallback

    def test_desk_uniad_jitter_dominates_synthetic_noise_floor(self):
        # jitter std on a typical desk token must exceed the generator's
        # noise floor, or the model profits from routing its own token back
        from uniad.dataio import SyntheticSpec
        spec = SyntheticSpec()
        cfg = desk_model_config("uniad", spec.c_org, spec.h, spec.w)
        typical_norm = np.sqrt(spec.rank + spec.c_org * spec.noise_floor ** 2)
        sigma = cfg.jitter_scale * typical_norm / cfg.c
        assert sigma > spec.noise_floor

    def test_desk_train_config_validates(self):
        desk_train_config(seed=3).validate()
        assert desk_train_config(seed=3).seed == 3
