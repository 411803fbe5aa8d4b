"""
Ground truth: kernel golden values, mass conservation, template oracle, count groups.
"""

import numpy as np
import pytest

from conftest import make_image
from segcrowd.errors import AnnotationError, ShapeError
from segcrowd.groundtruth import (
    AnnotatedImage,
    CountBins,
    DensityMap,
    density_map,
    downsample_max,
    downsample_sum,
    gaussian_kernel,
    make_bins,
    quantize_count,
    segmentation_map,
)


GOLDEN_CENTER = 0.01126048


def brute_force_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    grid = np.array([[np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2 * sigma ** 2))
                      for j in range(size)] for i in range(size)])
    return grid / grid.sum()


def chebyshev_oracle(points: np.ndarray, dims: tuple[int, int], half: int) -> np.ndarray:
    h, w = dims
    out = np.zeros(dims)
    pix = np.floor(points).astype(int)
    for r in range(h):
        for c in range(w):
            if any(max(abs(r - pr), abs(c - pc)) <= half for pr, pc in pix):
                out[r, c] = 1.0
    return out


# =============================================================================
# Gaussian kernel
# =============================================================================

class TestGaussianKernel:
    def test_normalized(self):
        assert abs(gaussian_kernel(15, 4.0).window.sum() - 1.0) < 1e-12

    def test_symmetry(self):
        w = gaussian_kernel(15, 4.0).window
        np.testing.assert_allclose(w, w.T, atol=0)
        np.testing.assert_allclose(w, w[::-1, :], atol=0)

    def test_golden_center(self):
        window = gaussian_kernel(15, 4.0).window
        assert window[7, 7] == pytest.approx(brute_force_kernel(15, 4.0)[7, 7], abs=1e-15)
        assert window[7, 7] == pytest.approx(GOLDEN_CENTER, abs=1e-8)

    def test_matches_brute_force(self):
        np.testing.assert_allclose(gaussian_kernel(9, 2.5).window, brute_force_kernel(9, 2.5), atol=1e-15)

    def test_even_size_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            gaussian_kernel(14, 4.0)

    def test_window_is_read_only(self):
        with pytest.raises(ValueError):
            gaussian_kernel().window[0, 0] = 1.0


# =============================================================================
# Density maps
# =============================================================================

class TestDensityMap:
    def test_no_points(self):
        assert not density_map(make_image([])).grid.any()

    def test_single_center_point(self):
        assert density_map(make_image([[32, 32]])).total == pytest.approx(1.0, abs=1e-9)

    def test_points_near_borders_conserve_mass(self, rng):
        pts = np.vstack([
            rng.uniform(0, 3, size=(4, 2)),
            [[63.5, 10.0], [10.0, 62.2], [0.0, 0.0], [63.9, 63.9], [1.0, 40.0]],
            rng.uniform(5, 58, size=(8, 2)),
        ])
        assert len(pts) == 17
        assert density_map(make_image(pts)).total == pytest.approx(17.0, abs=1e-6)

    def test_clip_mode_loses_border_mass(self):
        img = make_image([[0, 0]])
        clipped = density_map(img, border_mode="clip").total
        assert clipped < 0.5
        assert density_map(img, border_mode="renormalize").total == pytest.approx(1.0)

    def test_interior_point_is_the_kernel(self):
        kernel = gaussian_kernel()
        grid = density_map(make_image([[20.4, 30.9]]), kernel).grid
        np.testing.assert_array_equal(grid[13:28, 23:38], kernel.window)

    def test_out_of_bounds_rejected(self):
        with pytest.raises(AnnotationError, match="outside"):
            density_map(make_image([[64.0, 3.0]]))

    def test_unknown_border_mode(self):
        with pytest.raises(ValueError, match="border_mode"):
            density_map(make_image([]), border_mode="wrap")

    def test_conservation_over_random_scenes(self):
        rng = np.random.default_rng(99)
        kernel = gaussian_kernel()
        for _ in range(100):
            h, w = rng.integers(16, 80, size=2)
            n = int(rng.integers(0, 40))
            pts = np.column_stack([rng.uniform(0, h, n), rng.uniform(0, w, n)])
            pts = np.minimum(pts, [h - 1e-9, w - 1e-9])
            img = AnnotatedImage(np.zeros((h, w)), pts)
            dmap = density_map(img, kernel)
            assert abs(dmap.total - n) < 1e-6
            for factor in (2, 3, 4):
                assert downsample_sum(dmap, factor).total == pytest.approx(dmap.total, abs=1e-9)

    def test_conservation_on_synthetic_scenes(self, scenes):
        for img in scenes:
            assert abs(density_map(img).total - img.count) < 1e-6


# =============================================================================
# Segmentation maps
# =============================================================================

class TestSegmentationMap:
    def test_interior_point(self):
        assert segmentation_map(make_image([[30, 30]])).ones == 225

    def test_duplicate_points_idempotent(self):
        one = segmentation_map(make_image([[30, 30]])).grid
        two = segmentation_map(make_image([[30, 30], [30, 30]])).grid
        np.testing.assert_array_equal(one, two)

    def test_adding_points_never_clears_cells(self, rng):
        pts = np.column_stack([rng.uniform(0, 40, 20), rng.uniform(0, 50, 20)])
        previous = np.zeros((40, 50))
        for n in range(1, len(pts) + 1):
            grid = segmentation_map(make_image(pts[:n], dims=(40, 50))).grid
            assert np.all(grid >= previous)
            previous = grid

    def test_corner_point(self):
        assert segmentation_map(make_image([[0, 0]])).ones == 64

    def test_even_template_rejected(self):
        with pytest.raises(ShapeError, match="odd"):
            segmentation_map(make_image([[5, 5]]), 10)

    @pytest.mark.parametrize("template", [1, 5, 15, 25])
    def test_matches_chebyshev_oracle(self, rng, template):
        pts = np.column_stack([rng.uniform(0, 40, 12), rng.uniform(0, 50, 12)])
        img = make_image(pts, dims=(40, 50))
        expected = chebyshev_oracle(pts, (40, 50), template // 2)
        np.testing.assert_array_equal(segmentation_map(img, template).grid, expected)


# =============================================================================
# Resolution alignment
# =============================================================================

class TestDownsample:
    def test_block_sums(self):
        out = downsample_sum(DensityMap(np.full((4, 4), 0.25)), 2)
        np.testing.assert_allclose(out.grid, np.ones((2, 2)))

    def test_factor_one_is_identity(self, rng):
        grid = rng.random((5, 7))
        np.testing.assert_array_equal(downsample_sum(grid, 1).grid, grid)

    def test_padding_keeps_mass(self, rng):
        grid = rng.random((7, 9))
        out = downsample_sum(grid, 4)
        assert out.shape == (2, 3)
        assert out.total == pytest.approx(grid.sum())

    def test_max_keeps_binarity(self):
        seg = segmentation_map(make_image([[10, 10], [50, 3]]), 5)
        down = downsample_max(seg, 4).grid
        assert set(np.unique(down)) <= {0.0, 1.0}
        assert down[2, 2] == 1.0 and down[0, 15] == 0.0

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            downsample_sum(np.ones((4, 4)), 0)


# =============================================================================
# Count quantization
# =============================================================================

class TestCountBins:
    @pytest.fixture
    def bins(self) -> CountBins:
        return make_bins([1, 37, 250, 500], 5)

    def test_equal_width_groups(self, bins):
        np.testing.assert_allclose(bins.edges, [0, 100, 200, 300, 400, 500])
        for count, cls in [(1, 1), (100, 1), (101, 2), (200, 2), (201, 3), (300, 3), (301, 4), (401, 5), (500, 5)]:
            assert quantize_count(count, bins) == cls

    def test_reference_counts(self, bins):
        assert quantize_count(450, bins) == 5
        assert quantize_count(50, bins) == 1

    def test_edges_are_upper_inclusive(self, bins):
        for k, edge in enumerate(bins.edges[1:-1], start=1):
            assert quantize_count(edge, bins) == k
            assert quantize_count(edge + 1, bins) == k + 1

    def test_clamping(self, bins):
        assert quantize_count(9999, bins) == 5
        assert quantize_count(-3, bins) == 1

    def test_degenerate(self):
        bins = make_bins([12, 12, 12])
        assert bins.degenerate
        assert {quantize_count(c, bins) for c in (0, 12, 400)} == {1}

    def test_other_class_counts(self):
        bins = make_bins(range(1, 301), 3)
        assert [quantize_count(c, bins) for c in (50, 150, 250)] == [1, 2, 3]

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no training counts"):
            make_bins([])

    def test_dict_round_trip(self, bins):
        assert CountBins.from_dict(bins.to_dict()) == bins
        assert bins.quantize(250) == 3
