"""
Tests for annotation validation
"""

import numpy as np
import pytest

from conftest import make_image
from segcrowd.logging_utils import LogLevel, quiet_logger
from segcrowd.validation import AnnotationValidator, ValidationResult, polygon_area


@pytest.fixture
def validator() -> AnnotationValidator:
    return AnnotationValidator(min_input_size=16, logger=quiet_logger(AnnotationValidator.MODULE_NAME))


def check_names(result) -> list[str]:
    return [issue.check_name for issue in result.issues]


def test_clean_image_passes(validator, scenes):
    for img in scenes:
        result = validator.validate_image(img)
        assert result.overall_result == ValidationResult.PASS
        assert result.checks_passed == 5
    assert validator.get_statistics()["pass_rate"] == 1.0


def test_point_outside_fails(validator):
    result = validator.validate_image(make_image([[1, 1], [64, 3], [-0.5, 2]]))
    assert not result.is_valid
    assert check_names(result) == ["points_in_bounds"]
    assert result.failures[0].affected == [1, 2]


def test_pixels_out_of_range_fail(validator):
    assert check_names(validator.validate_image(make_image([], value=1.5))) == ["pixel_range"]
    img = make_image([])
    img.pixels[3, 3] = np.nan
    assert not validator.validate_image(img).is_valid


def test_degenerate_roi_fails(validator):
    result = validator.validate_image(make_image([], roi=[[0, 0], [10, 10], [20, 20]]))
    assert check_names(result) == ["roi_degenerate"]


def test_roi_outside_fails(validator):
    result = validator.validate_image(make_image([], roi=[[0, 0], [0, 70], [30, 30]]))
    assert check_names(result) == ["roi_in_bounds"]
    assert result.failures[0].affected == [1]


def test_roi_on_the_image_edge_passes(validator):
    result = validator.validate_image(make_image([], roi=[[0, 0], [0, 64], [64, 64], [64, 0]]))
    assert result.overall_result == ValidationResult.PASS


def test_duplicates_only_warn(validator):
    result = validator.validate_image(make_image([[5, 5], [5, 5], [9, 9], [5, 5]]))
    assert result.is_valid
    assert result.overall_result == ValidationResult.WARN
    assert result.issues[0].message == "2 duplicate points"


def test_small_image_only_warns(validator):
    result = validator.validate_image(make_image([[2, 2]], dims=(12, 40)))
    assert result.overall_result == ValidationResult.WARN
    assert check_names(result) == ["min_size"]


def test_failure_logged_with_reason(validator):
    validator.validate_image(make_image([[99, 99]], image_id="bad"))
    errors = validator.logger.get_entries(LogLevel.ERROR)
    assert errors and errors[0]["image_id"] == "bad"
    assert "outside" in errors[0]["reason"]
    assert errors[0]["suggested_fix"]


def test_statistics_and_reset(validator):
    validator.validate_image(make_image([]))
    validator.validate_image(make_image([[70, 0]]))
    stats = validator.get_statistics()
    assert stats["images_failed"] == 1
    assert stats["rejection_reasons"] == {"points_in_bounds": 1}
    validator.reset()
    assert validator.get_statistics()["images_validated"] == 0


def test_polygon_area():
    assert polygon_area(np.array([[0, 0], [0, 4], [3, 4], [3, 0]])) == pytest.approx(12.0)
