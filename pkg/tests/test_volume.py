import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gliosurv.exceptions import DegenerateInputError, ShapeError, ValidationError
from gliosurv.volume import (
    IntensityVolume,
    LabelVolume,
    ROIMask,
    boundary_mask,
    connected_components,
    roi_mask,
    zscore_normalize,
)
from oracles import components_bfs
from strategies import bool_masks, label_volumes


class TestLabelVolume:
    def test_rejects_invalid_labels(self):
        with pytest.raises(ValidationError, match=r"\[3\]"):
            LabelVolume(np.array([[[0, 1, 3]]]))

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValidationError):
            LabelVolume(np.zeros((2, 2, 2), np.uint8), spacing=(1, 0, 1))

    def test_rejects_non_3d(self):
        with pytest.raises(ShapeError):
            LabelVolume(np.zeros((2, 2), np.uint8))

    def test_data_is_read_only(self):
        vol = LabelVolume(np.zeros((2, 2, 2), np.uint8))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1

    def test_float_integral_data_is_accepted(self):
        vol = LabelVolume(np.array([[[0.0, 4.0]]]))
        assert vol.data.dtype == np.uint8

    def test_intensity_requires_finite(self):
        with pytest.raises(ValidationError):
            IntensityVolume(np.array([[[0.0, np.nan]]]))


class TestROIMask:
    def test_all_enhancing(self):
        vol = LabelVolume(np.full((3, 3, 3), 4, np.uint8))
        assert roi_mask(vol, "ET").data.all()
        assert not roi_mask(vol, "ED").data.any()

    def test_voxelwise_definition(self):
        vol = LabelVolume(np.array([0, 1, 2, 4], np.uint8).reshape(4, 1, 1))
        assert roi_mask(vol, "WT").data.ravel().tolist() == [False, True, True, True]
        assert roi_mask(vol, "TC").data.ravel().tolist() == [False, True, False, True]
        assert roi_mask(vol, "ET").data.ravel().tolist() == [False, False, False, True]
        assert roi_mask(vol, "ED").data.ravel().tolist() == [False, False, True, False]

    def test_unknown_kind(self):
        vol = LabelVolume(np.zeros((1, 1, 1), np.uint8))
        with pytest.raises(ValidationError):
            roi_mask(vol, "XX")

    @given(label_volumes())
    def test_hierarchy(self, vol):
        wt, tc, et = (roi_mask(vol, k).data for k in ("WT", "TC", "ET"))
        assert not np.any(tc & ~wt)
        assert not np.any(et & ~tc)

    def test_mask_count(self):
        m = ROIMask(np.eye(3, dtype=bool)[:, :, None], kind="brain")
        assert m.count == 3


class TestConnectedComponents:
    def test_empty(self):
        assert connected_components(np.zeros((4, 4, 4), bool)).count == 0

    def test_two_blobs(self):
        m = np.zeros((9, 5, 5), bool)
        m[0:3, 0:3, 0:3] = True
        m[6:9, 0:3, 0:3] = True  # planes x=3,4,5 empty
        cs = connected_components(m, 26)
        assert cs.count == 2
        assert sorted(cs.sizes.tolist()) == [27, 27]
        assert sorted(np.unique(cs.labels[m]).tolist()) == [1, 2]

    def test_corner_contact(self):
        m = np.zeros((2, 2, 2), bool)
        m[0, 0, 0] = m[1, 1, 1] = True
        # (1,1,1) is a 26- but not a 6-neighbour offset
        assert connected_components(m, 6).count == 2
        assert connected_components(m, 26).count == 1

    def test_bad_connectivity(self):
        with pytest.raises(ValidationError):
            connected_components(np.ones((2, 2, 2), bool), 8)

    @given(bool_masks(), st.sampled_from([6, 26]))
    def test_matches_bfs_and_partitions(self, mask, conn):
        cs = connected_components(mask, conn)
        assert cs.sizes.sum() == mask.sum()
        assert sorted(cs.sizes.tolist()) == components_bfs(mask, conn)
        assert set(np.unique(cs.labels[mask]).tolist()) == set(range(1, cs.count + 1))


class TestBoundary:
    def test_cube_interior(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:4, 1:4, 1:4] = True
        b = boundary_mask(m)
        assert b.sum() == 26 and not b[2, 2, 2]

    def test_grid_edge_counts_as_exposed(self):
        assert boundary_mask(np.ones((3, 3, 3), bool)).sum() == 26


class TestZScore:
    def test_closed_form(self):
        vol = IntensityVolume(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
        out = zscore_normalize(vol).data.ravel()
        np.testing.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=1e-4)

    def test_outside_mask_zero(self):
        vol = IntensityVolume(np.arange(8.0).reshape(2, 2, 2))
        mask = np.zeros((2, 2, 2), bool)
        mask[0] = True
        out = zscore_normalize(vol, mask).data
        assert np.all(out[1] == 0)

    def test_constant_raises(self):
        with pytest.raises(DegenerateInputError):
            zscore_normalize(IntensityVolume(np.full((2, 2, 2), 5.0)))

    def test_single_voxel_mask_raises(self):
        mask = np.zeros((2, 2, 2), bool)
        mask[0, 0, 0] = True
        with pytest.raises(DegenerateInputError):
            zscore_normalize(IntensityVolume(np.arange(8.0).reshape(2, 2, 2)), mask)

    @given(hnp.arrays(np.float64, (4, 3, 2), elements=st.floats(-1e3, 1e3)))
    def test_statistics_and_idempotence(self, data):
        if np.ptp(data) < 1e-3:
            return
        out = zscore_normalize(IntensityVolume(data)).data
        assert abs(out.mean()) < 1e-10
        assert abs(out.std() - 1.0) < 1e-10
        again = zscore_normalize(IntensityVolume(out)).data
        np.testing.assert_allclose(again, out, atol=1e-10)
