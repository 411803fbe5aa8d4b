"""
Ablation presets: variant construction and comparison tables.
"""

import pytest

from conftest import tiny_config
from segcrowd.ablation import ablation_run, preset_variants
from segcrowd.errors import ConfigError
from segcrowd.logging_utils import quiet_logger
from segcrowd.utils import read_csv


@pytest.fixture
def base():
    return tiny_config(iterations=2)


def run(scenes, base, preset, **kwargs):
    title, variants = preset_variants(preset, base, **kwargs)
    return ablation_run(scenes, scenes, variants, base, title=title, logger=quiet_logger("Ablation"))


def test_preset_names(base):
    assert [v.name for v in preset_variants("seg", base)[1]] == ["Without Seg-task", "With Seg-task"]
    assert [v.name for v in preset_variants("template", base)[1]] == ["5x5", "15x15", "25x25"]
    assert [v.name for v in preset_variants("classes", base, class_counts=[3, 7])[1]] == ["K=3", "K=7"]
    with pytest.raises(ValueError, match="unknown ablation preset"):
        preset_variants("dropout", base)


def test_class_variants_resize_the_classifier(base):
    _, variants = preset_variants("classes", base, class_counts=[7])
    config = variants[0].apply(base)
    assert config.groundtruth.num_classes == 7
    assert config.model.fc_widths == [base.model.fc_widths[0], 7]


def test_even_template_rejected(base):
    _, variants = preset_variants("template", base, template_sizes=[4])
    with pytest.raises(ConfigError):
        variants[0].apply(base)


def test_variants_do_not_touch_the_base(base):
    _, variants = preset_variants("seg", base)
    variants[0].apply(base)
    assert base.train.seg_task is True


@pytest.mark.slow
def test_segmentation_table(scenes, base, tmp_path):
    table = run(scenes, base, "seg")
    assert table.title == "Segmentation task"
    assert [r.variant for r in table.rows] == ["Without Seg-task", "With Seg-task"]
    for row in table.rows:
        assert row.num_images == 4 and row.skipped == 0
        assert row.mse >= row.mae >= 0.0

    text = table.format()
    assert text.splitlines()[0] == "Segmentation task"
    assert "With Seg-task" in text

    rows = read_csv(table.to_csv(tmp_path / "seg.csv"))
    assert [r["variant"] for r in rows] == ["Without Seg-task", "With Seg-task"]


@pytest.mark.slow
def test_rows_are_reproducible(scenes, base):
    first = run(scenes, base, "template")
    second = run(scenes, base, "template")
    assert [r.to_dict() for r in first.rows] == [r.to_dict() for r in second.rows]
    assert [r.variant for r in first.rows] == ["5x5", "15x15", "25x25"]


@pytest.mark.slow
def test_template_size_changes_the_objective(scenes, base):
    table = run(scenes, base, "template", template_sizes=[5, 25])
    small, large = table.rows
    assert small.final_l_fin != large.final_l_fin
