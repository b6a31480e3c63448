import numpy as np
import pytest

from voxshap.errors import ValidationError
from voxshap.grid import (
    BBox,
    LabelVolume,
    RoiMask,
    Volume,
    crop,
    cubic_bbox,
    delinearize,
    linear_index,
    rf_support,
    tight_bbox,
)


def roi_with(dims, voxels, spacing=(1.0, 1.0, 1.0)) -> RoiMask:
    data = np.zeros(dims, dtype=np.uint8)
    for v in voxels:
        data[v] = 1
    return RoiMask(data=data, spacing_mm=spacing)


class TestRasterTypes:
    def test_volume_casts_to_float32_and_freezes(self):
        v = Volume(data=np.ones((2, 3, 4), dtype=np.float64), spacing_mm=(1, 2, 3))
        assert v.data.dtype == np.float32
        assert v.dims == (2, 3, 4)
        with pytest.raises(ValueError):
            v.data[0, 0, 0] = 5.0

    @pytest.mark.parametrize("spacing", [(0, 1, 1), (1, -2, 1), (1, 1)])
    def test_bad_spacing_rejected(self, spacing):
        with pytest.raises(ValidationError):
            Volume(data=np.zeros((2, 2, 2), dtype=np.float32), spacing_mm=spacing)

    def test_labels_must_be_nonnegative_ints(self):
        with pytest.raises(ValidationError):
            LabelVolume(data=np.full((2, 2, 2), -1), spacing_mm=(1, 1, 1))
        with pytest.raises(ValidationError):
            LabelVolume(data=np.zeros((2, 2, 2), dtype=np.float32), spacing_mm=(1, 1, 1))

    def test_roi_values_binary(self):
        with pytest.raises(ValidationError):
            RoiMask(data=np.full((2, 2, 2), 2), spacing_mm=(1, 1, 1))

    def test_linear_index_round_trip(self):
        dims = (3, 4, 5)
        for x in range(dims[0]):
            for y in range(dims[1]):
                for z in range(dims[2]):
                    assert delinearize(linear_index(x, y, z, dims), dims) == (x, y, z)

    def test_linear_index_is_x_fastest(self):
        dims = (3, 4, 5)
        assert linear_index(1, 0, 0, dims) == 1
        assert linear_index(0, 1, 0, dims) == 3
        assert linear_index(0, 0, 1, dims) == 12


class TestCubicBBox:
    def test_single_voxel_is_already_cubic(self):
        box, cubic = cubic_bbox(roi_with((20, 20, 20), [(5, 5, 5)]))
        assert box == BBox(min=(5, 5, 5), max=(5, 5, 5))
        assert cubic

    def test_symmetric_expansion_to_max_extent(self):
        # tight extents (3, 5, 2) inside 64^3: cube side 5
        roi = roi_with((64, 64, 64), [(30, 30, 30), (32, 34, 31)])
        box, cubic = cubic_bbox(roi)
        assert cubic
        assert box.extents == (5, 5, 5)
        tight = tight_bbox(roi)
        assert box.contains(tight)
        # symmetric: expansion split as evenly as the parity allows
        for a in range(3):
            lo_pad = tight.min[a] - box.min[a]
            hi_pad = box.max[a] - tight.max[a]
            assert abs(lo_pad - hi_pad) <= 1

    def test_boundary_overflow_shifts_to_opposite_side(self):
        # tight box touches x=0; expansion overflow must move to max side
        roi = roi_with((64, 64, 64), [(0, 10, 10), (1, 14, 12)])
        box, cubic = cubic_bbox(roi)
        assert cubic
        assert box.min[0] == 0
        assert box.extents == (5, 5, 5)
        # brute force: no 5-cube fits with a smaller max.x while containing the ROI
        assert box.max[0] == 4

    def test_side_exceeding_volume_clamps_with_flag(self):
        roi = roi_with((4, 20, 20), [(0, 2, 2), (3, 2, 14)])  # extent y..z side 13 > nx=4
        box, cubic = cubic_bbox(roi)
        assert not cubic
        assert box.min[0] == 0 and box.max[0] == 3  # clamped to full x extent
        assert box.extents[2] == 13

    def test_contains_all_roi_voxels_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            dims = tuple(rng.integers(5, 30, size=3).tolist())
            n = int(rng.integers(1, 10))
            voxels = {tuple(rng.integers(0, d) for d in dims) for _ in range(n)}
            box, cubic = cubic_bbox(roi_with(dims, voxels))
            tight = tight_bbox(roi_with(dims, voxels))
            assert box.contains(tight)
            assert box.within(dims)
            if cubic:
                assert len(set(box.extents)) == 1

    def test_full_volume_roi_yields_full_box(self):
        dims = (6, 10, 8)
        box, cubic = cubic_bbox(roi_with(dims, [(0, 0, 0), (5, 9, 7)]))
        assert box == BBox(min=(0, 0, 0), max=(5, 9, 7))
        assert not cubic  # y extent 10 cannot fit in x (6) or z (8)

    def test_empty_roi_rejected(self):
        with pytest.raises(ValidationError, match="empty ROI"):
            cubic_bbox(RoiMask(data=np.zeros((4, 4, 4), dtype=np.uint8), spacing_mm=(1, 1, 1)))


class TestRfSupport:
    def test_dilation_by_patch_radius(self):
        b = BBox(min=(10, 10, 10), max=(13, 13, 13))
        assert rf_support(b, (8, 8, 8), (64, 64, 64)) == BBox(min=(6, 6, 6), max=(17, 17, 17))

    def test_clamped_at_zero(self):
        b = BBox(min=(1, 1, 1), max=(2, 2, 2))
        assert rf_support(b, (8, 8, 8), (64, 64, 64)) == BBox(min=(0, 0, 0), max=(6, 6, 6))

    def test_full_volume_stays_full(self):
        b = BBox(min=(0, 0, 0), max=(63, 63, 63))
        assert rf_support(b, (8, 8, 8), (64, 64, 64)) == b

    def test_odd_patch_uses_ceil_radius(self):
        b = BBox(min=(10, 10, 10), max=(10, 10, 10))
        assert rf_support(b, (5, 5, 5), (64, 64, 64)) == BBox(min=(7, 7, 7), max=(13, 13, 13))

    def test_contains_input_and_monotone(self):
        rng = np.random.default_rng(3)
        dims = (32, 32, 32)
        for _ in range(20):
            lo = rng.integers(0, 20, size=3)
            hi = lo + rng.integers(0, 10, size=3)
            small = BBox(min=tuple(lo), max=tuple(hi))
            big = BBox(min=tuple(max(0, v - 2) for v in lo), max=tuple(min(31, v + 2) for v in hi))
            rs, rb = rf_support(small, (7, 5, 3), dims), rf_support(big, (7, 5, 3), dims)
            assert rs.contains(small)
            assert rb.contains(rs)


class TestCrop:
    def test_full_volume_crop_is_identity(self):
        v = Volume(data=np.arange(24, dtype=np.float32).reshape(2, 3, 4), spacing_mm=(1, 1, 1))
        out = crop(v, BBox(min=(0, 0, 0), max=(1, 2, 3)))
        np.testing.assert_array_equal(out.data, v.data)
        assert out.spacing_mm == v.spacing_mm

    def test_single_voxel_crop(self):
        v = Volume(data=np.arange(27, dtype=np.float32).reshape(3, 3, 3), spacing_mm=(1, 1, 1))
        out = crop(v, BBox(min=(1, 2, 0), max=(1, 2, 0)))
        assert out.dims == (1, 1, 1)
        assert out.data[0, 0, 0] == v.data[1, 2, 0]

    def test_crop_reembed_round_trip(self):
        rng = np.random.default_rng(11)
        v = Volume(data=rng.normal(size=(8, 9, 10)).astype(np.float32), spacing_mm=(1, 2, 3))
        b = BBox(min=(2, 3, 4), max=(5, 6, 9))
        cropped = crop(v, b)
        rebuilt = np.zeros(v.dims, dtype=np.float32)
        rebuilt[b.slices] = cropped.data
        np.testing.assert_array_equal(rebuilt[b.slices], v.data[b.slices])

    def test_out_of_bounds_rejected(self):
        v = Volume(data=np.zeros((4, 4, 4), dtype=np.float32), spacing_mm=(1, 1, 1))
        with pytest.raises(ValidationError):
            crop(v, BBox(min=(0, 0, 0), max=(4, 3, 3)))

    def test_crop_preserves_kind(self):
        lab = LabelVolume(data=np.ones((4, 4, 4), dtype=np.int32), spacing_mm=(1, 1, 1))
        assert isinstance(crop(lab, BBox(min=(0, 0, 0), max=(1, 1, 1))), LabelVolume)
