"""
Training loop: sample construction, determinism, artifacts, divergence.
"""

import numpy as np
import pytest

from conftest import make_image, tiny_config
from segcrowd.errors import DivergenceError, InputSizeError, NonFiniteError
from segcrowd.groundtruth import make_bins
from segcrowd.logging_utils import LogLevel, quiet_logger
from segcrowd.model import load_model
from segcrowd.trainer import FINAL_CHECKPOINT, LOSS_LOG_NAME, Trainer, prepare_sample, stride_crop
from segcrowd.utils import read_csv


def make_trainer(config) -> Trainer:
    return Trainer(config, logger=quiet_logger(Trainer.MODULE_NAME))


class TestSamples:
    def test_stride_crop(self):
        img = make_image([[2, 2], [65, 3], [10, 69]], dims=(66, 70), roi=[[0, 0], [0, 70], [66, 0]])
        out = stride_crop(img, 4)
        assert out.shape == (64, 68)
        assert out.count == 1
        assert out.roi is None

    def test_aligned_image_untouched(self, scenes):
        assert stride_crop(scenes[0], 4) is scenes[0]

    def test_targets_at_output_resolution(self, scenes):
        config = tiny_config()
        img = scenes[0]
        bins = make_bins([5, 20], 5)
        sample = prepare_sample(img, config.groundtruth, config.model, bins)
        assert sample.image.dims == (1, 64, 64)
        assert sample.targets.density.shape == (16, 16)
        assert sample.targets.segmentation.shape == (16, 16)
        assert sample.targets.density.sum() == pytest.approx(img.count, abs=1e-6)
        assert set(np.unique(sample.targets.segmentation)) <= {0.0, 1.0}
        assert sample.targets.class_label == bins.quantize(img.count)

    def test_undersized(self):
        config = tiny_config()
        with pytest.raises(InputSizeError):
            prepare_sample(make_image([], dims=(12, 30)), config.groundtruth, config.model, make_bins([1]))

    def test_bins_from_augmented_samples(self, scenes):
        samples, bins = make_trainer(tiny_config()).build_samples(scenes)
        assert len(samples) == 36
        counts = [s.count for s in samples]
        assert bins.edges[0] == min(counts) - 1
        assert bins.edges[-1] == max(counts)


class TestTraining:
    def test_deterministic(self, scenes):
        a = make_trainer(tiny_config(iterations=3)).train(scenes)
        b = make_trainer(tiny_config(iterations=3)).train(scenes)
        np.testing.assert_array_equal(a.l_fin_series(), b.l_fin_series())
        for name, t in a.params.items():
            np.testing.assert_array_equal(t.values, b.params[name].values)

    def test_loss_identity_every_iteration(self, scenes):
        result = make_trainer(tiny_config(iterations=3)).train(scenes)
        assert result.iterations == 3
        for parts in result.loss_log:
            assert parts.l_fin == pytest.approx(parts.l_den + parts.l_int + parts.l_seg + 0.01 * parts.l_cla, abs=1e-12)

    def test_artifacts(self, tmp_path, scenes):
        config = tiny_config(iterations=4, checkpoint_every=2)
        result = make_trainer(config).train(scenes, out_dir=tmp_path)
        assert [p.name for p in result.checkpoints] == ["iter_000002.scnw", "iter_000004.scnw", FINAL_CHECKPOINT]
        rows = read_csv(tmp_path / LOSS_LOG_NAME)
        assert list(rows[0]) == ["iteration", "l_int", "l_den", "l_seg", "l_cla", "l_fin"]
        assert [int(r["iteration"]) for r in rows] == [1, 2, 3, 4]
        assert float(rows[-1]["l_fin"]) == result.loss_log[-1].l_fin

        params, loaded_config, bins = load_model(result.final_checkpoint)
        assert bins == result.bins
        assert loaded_config.train.iterations == 4
        for name, t in result.params.items():
            np.testing.assert_array_equal(params[name].values, t.values)

    def test_batches(self, scenes):
        result = make_trainer(tiny_config(iterations=2, batch_size=3)).train(scenes)
        assert result.iterations == 2

    def test_disabled_tasks_stay_zero(self, scenes):
        config = tiny_config(iterations=2, cla_task=False, seg_task=False, intermediate_supervision=False)
        result = make_trainer(config).train(scenes)
        for parts in result.loss_log:
            assert parts.l_cla == parts.l_seg == parts.l_int == 0.0
            assert parts.l_fin == parts.l_den

    def test_divergence(self, scenes, monkeypatch):
        import segcrowd.trainer as trainer_module

        calls = {"n": 0}
        real_forward = trainer_module.forward

        def failing_forward(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise NonFiniteError("conv2d: produced non-finite values")
            return real_forward(*args, **kwargs)

        monkeypatch.setattr(trainer_module, "forward", failing_forward)
        trainer = make_trainer(tiny_config(iterations=3))
        with pytest.raises(DivergenceError) as info:
            trainer.train(scenes)
        assert info.value.iteration == 2
        assert trainer.logger.get_entries(LogLevel.CRITICAL)

    def test_inputs_logged(self, scenes):
        trainer = make_trainer(tiny_config(iterations=1))
        trainer.train(scenes)
        entry = next(e for e in trainer.logger.get_entries(LogLevel.DEBUG) if e["message"] == "Input: training images")
        assert entry["images"] == len(scenes)
        assert entry["counts"] == [img.count for img in scenes]

    def test_non_finite_pixels_rejected_before_training(self):
        config = tiny_config()
        config.augmentation.enabled = False
        img = make_image([[10, 10]], dims=(32, 32))
        img.pixels[4, 4] = np.nan
        with pytest.raises(NonFiniteError):
            make_trainer(config).train([img])

    def test_no_images(self):
        with pytest.raises(ValueError):
            make_trainer(tiny_config()).train([])
