"""
SegCrowd - Annotation Validation

Responsibilities:
- Reject images with:
  - Head points outside the image
  - Pixel values outside [0, 1] or non-finite
  - ROI polygons that leave the image or enclose no area
- Warn on duplicate points and on images below the network minimum
- Log rejection reasons with the affected image id and point indices

FAIL-FAST PHILOSOPHY:
A FAIL aborts loading of the dataset with the entry id; WARN issues are
logged and the image is kept.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import cv2
import numpy as np

from .groundtruth import AnnotatedImage
from .logging_utils import RunLogger


class ValidationResult(Enum):
    """Result of validation check."""
    PASS = "PASS"
    FAIL = "FAIL"
    WARN = "WARN"


@dataclass
class ValidationIssue:
    """Describes a validation issue."""
    severity: ValidationResult
    check_name: str
    message: str
    affected: list[int] = field(default_factory=list)
    suggested_fix: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "check": self.check_name,
            "message": self.message,
            "affected": self.affected,
            "suggested_fix": self.suggested_fix,
        }


@dataclass
class ImageValidationResult:
    """Complete validation result for one annotated image."""
    image_id: str
    overall_result: ValidationResult
    issues: list[ValidationIssue] = field(default_factory=list)
    checks_passed: int = 0
    checks_failed: int = 0
    checks_warned: int = 0

    @property
    def is_valid(self) -> bool:
        return self.overall_result != ValidationResult.FAIL

    @property
    def failures(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == ValidationResult.FAIL]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "result": self.overall_result.value,
            "is_valid": self.is_valid,
            "checks_passed": self.checks_passed,
            "checks_failed": self.checks_failed,
            "checks_warned": self.checks_warned,
            "issues": [i.to_dict() for i in self.issues],
        }


def polygon_area(polygon: np.ndarray) -> float:
    """Unsigned area of a (row, col) vertex list."""
    contour = np.asarray(polygon, dtype=np.float32)[:, ::-1].reshape(-1, 1, 2)
    return float(cv2.contourArea(contour))


class AnnotationValidator:
    """
    Validates annotated images before they enter a dataset.
    """

    MODULE_NAME = "AnnotationValidator"

    def __init__(
        self,
        min_input_size: int = 16,
        logger: Optional[RunLogger] = None,
    ):
        """
        Args:
            min_input_size: Network minimum H and W (smaller images only warn)
            logger: Optional logger
        """
        self.min_input_size = min_input_size
        self.logger = logger or RunLogger(self.MODULE_NAME)

        self._images_validated = 0
        self._images_passed = 0
        self._images_failed = 0
        self._rejection_reasons: dict[str, int] = {}

        self.logger.log_init(min_input_size=min_input_size)

    def validate_image(self, img: AnnotatedImage) -> ImageValidationResult:
        result = ImageValidationResult(image_id=img.image_id, overall_result=ValidationResult.PASS)

        checks = [
            self._check_pixel_range,
            self._check_points_in_bounds,
            self._check_roi,
            self._check_duplicate_points,
            self._check_min_size,
        ]
        for check in checks:
            issue = check(img)
            if issue is None:
                result.checks_passed += 1
                continue
            result.issues.append(issue)
            if issue.severity == ValidationResult.FAIL:
                result.checks_failed += 1
                result.overall_result = ValidationResult.FAIL
            elif issue.severity == ValidationResult.WARN:
                result.checks_warned += 1
                if result.overall_result == ValidationResult.PASS:
                    result.overall_result = ValidationResult.WARN

        self._images_validated += 1
        if result.is_valid:
            self._images_passed += 1
            for issue in result.issues:
                self.logger.warning(issue.message, image_id=img.image_id, check=issue.check_name)
        else:
            self._images_failed += 1
            for issue in result.failures:
                self._rejection_reasons[issue.check_name] = self._rejection_reasons.get(issue.check_name, 0) + 1
            first = result.failures[0]
            self.logger.error(
                "Validation FAILED",
                image_id=img.image_id,
                reason=first.message,
                issues=[i.to_dict() for i in result.failures],
                suggested_fix=first.suggested_fix,
            )
        return result

    def _check_pixel_range(self, img: AnnotatedImage) -> Optional[ValidationIssue]:
        px = img.pixels
        if not np.all(np.isfinite(px)):
            return ValidationIssue(
                severity=ValidationResult.FAIL,
                check_name="pixel_range",
                message="Image contains NaN or Inf pixels",
                suggested_fix="Re-export the image",
            )
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            return ValidationIssue(
                severity=ValidationResult.FAIL,
                check_name="pixel_range",
                message=f"Pixels span [{px.min():.4f}, {px.max():.4f}], expected [0, 1]",
                suggested_fix="Scale 8-bit images by 1/255",
            )
        return None

    def _check_points_in_bounds(self, img: AnnotatedImage) -> Optional[ValidationIssue]:
        bad = img.out_of_bounds()
        if bad.size:
            return ValidationIssue(
                severity=ValidationResult.FAIL,
                check_name="points_in_bounds",
                message=f"{bad.size} of {img.count} points lie outside the {img.height}x{img.width} image",
                affected=bad.tolist(),
                suggested_fix="Points are (row, col); check for swapped axes",
            )
        return None

    def _check_roi(self, img: AnnotatedImage) -> Optional[ValidationIssue]:
        if img.roi is None:
            return None
        roi = img.roi
        if len(roi) < 3 or polygon_area(roi) <= 0.0:
            return ValidationIssue(
                severity=ValidationResult.FAIL,
                check_name="roi_degenerate",
                message=f"ROI with {len(roi)} vertices encloses no area",
                suggested_fix="Give at least 3 non-collinear vertices",
            )
        r, c = roi[:, 0], roi[:, 1]
        outside = np.flatnonzero((r < 0) | (r > img.height) | (c < 0) | (c > img.width))
        if outside.size:
            return ValidationIssue(
                severity=ValidationResult.FAIL,
                check_name="roi_in_bounds",
                message=f"{outside.size} ROI vertices lie outside the image",
                affected=outside.tolist(),
            )
        return None

    def _check_duplicate_points(self, img: AnnotatedImage) -> Optional[ValidationIssue]:
        if img.count < 2:
            return None
        _, first, counts = np.unique(img.points, axis=0, return_index=True, return_counts=True)
        dupes = first[counts > 1]
        if dupes.size:
            return ValidationIssue(
                severity=ValidationResult.WARN,
                check_name="duplicate_points",
                message=f"{int((counts - 1).sum())} duplicate points",
                affected=sorted(dupes.tolist()),
            )
        return None

    def _check_min_size(self, img: AnnotatedImage) -> Optional[ValidationIssue]:
        if img.height < self.min_input_size or img.width < self.min_input_size:
            return ValidationIssue(
                severity=ValidationResult.WARN,
                check_name="min_size",
                message=f"Image {img.height}x{img.width} is below the network minimum {self.min_input_size}",
                suggested_fix="It will be skipped during evaluation",
            )
        return None

    def get_statistics(self) -> dict:
        return {
            "images_validated": self._images_validated,
            "images_passed": self._images_passed,
            "images_failed": self._images_failed,
            "pass_rate": self._images_passed / max(self._images_validated, 1),
            "rejection_reasons": self._rejection_reasons.copy(),
        }

    def log_summary(self) -> None:
        stats = self.get_statistics()
        self.logger.info("Validation summary", **stats)

    def reset(self) -> None:
        self._images_validated = 0
        self._images_passed = 0
        self._images_failed = 0
        self._rejection_reasons.clear()
