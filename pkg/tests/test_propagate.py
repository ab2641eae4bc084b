import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dragvideo.core import Label, PointSet
from dragvideo.propagate import (
    PropagationError,
    expand_to_set,
    propagate_all,
    propagate_handles,
    propagate_masks,
    propagate_targets,
    rasterize_mask,
)


class Labels:
    def __init__(self, *labels):
        self.values = list(labels)

    def labels(self, frame, points):
        return self.values[:len(np.asarray(points).reshape(-1, 2))]


class Shift:
    def __init__(self, dx, dy):
        self.d = np.array([dx, dy], dtype=np.float64)

    def correspond(self, frame, points):
        return np.asarray(points, dtype=np.float64).reshape(-1, 2) + self.d


class Broken:
    def correspond(self, frame, points):
        raise RuntimeError("oracle unavailable")


FG, BG = Label.FOREGROUND, Label.BACKGROUND


def test_expand_to_set_center_and_clamp():
    s = expand_to_set((3.5, 4.0), 1)
    assert len(s) == 9 and s.center == (3.5, 4.0)
    edge = expand_to_set((0.0, 0.0), 1, height=10, width=10)
    assert edge.points.min() == 0.0
    assert len(expand_to_set((1, 1), 0)) == 1


def test_background_copies_nearest_foreground_motion():
    s = PointSet([[0.0, 0.0], [10.0, 0.0], [3.0, 0.0]])
    seg = Labels(FG, FG, BG)

    class PerPoint:
        def correspond(self, frame, pts):
            pts = np.asarray(pts).reshape(-1, 2)
            return pts + np.where(pts[:, :1] < 5, [[1.0, 0.0]], [[0.0, 2.0]])

    out = propagate_handles(s, 0, seg, PerPoint())
    assert np.array_equal(out.points[2], [4.0, 0.0])
    assert out.labels == (FG, FG, BG)


def test_nearest_foreground_tie_goes_to_lowest_index():
    s = PointSet([[0.0, 0.0], [4.0, 0.0], [2.0, 0.0]])

    class Split:
        def correspond(self, frame, pts):
            pts = np.asarray(pts).reshape(-1, 2)
            return pts + np.where(pts[:, :1] < 1, [[0.0, 1.0]], [[0.0, -1.0]])

    out = propagate_handles(s, 0, Labels(FG, FG, BG), Split())
    assert np.array_equal(out.points[2], [2.0, 1.0])


def test_all_background_uses_correspondence():
    s = PointSet([[1.0, 1.0]])
    assert np.array_equal(propagate_handles(s, 0, Labels(BG), Shift(1, 1)).points, [[2.0, 2.0]])
    with pytest.raises(ValueError):
        propagate_handles(PointSet(np.zeros((0, 2))), 0, Labels(), Shift(0, 0))


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5), st.floats(-5, 5))
def test_target_keeps_offset_to_handle(qx, qy, dx, dy):
    p, p2 = (1.0, 2.0), (1.0 + dx, 2.0 + dy)
    q2 = propagate_targets((qx, qy), p, p2)
    assert q2.x - p2[0] == pytest.approx(qx - p[0], abs=1e-9)
    assert q2.y - p2[1] == pytest.approx(qy - p[1], abs=1e-9)


def test_target_clamped_to_frame():
    assert propagate_targets((9.0, 0.0), (0.0, 0.0), (5.0, -3.0), shape=(10, 12)) == (11.0, 0.0)


def test_rasterize_mask():
    m = rasterize_mask([(5.0, 5.0)], 2, 12, 12)
    assert m.shape == (12, 12, 1) and m.sum() == 25
    assert np.all(rasterize_mask([], 2, 4, 4) == 1.0)
    assert rasterize_mask([(0.0, 0.0)], 1, 5, 5).sum() == 4


def test_propagate_masks_follow_motion():
    sets, masks = propagate_masks([(4.0, 4.0)], 1, Labels(FG), Shift(2, 0), 3, (16, 16))
    assert np.array_equal(sets[2].points, [[8.0, 4.0]])
    assert masks[2][4, 8, 0] == 1.0 and masks[2][4, 4, 0] == 0.0


def test_propagate_all_chains_and_labels():
    seg = Labels(*[FG] * 9)
    inp = propagate_all([(5.0, 5.0)], [(9.0, 5.0)], [], 4, (20, 20), seg, Shift(1, 0.5))
    assert inp.num_frames == 4
    assert inp.handles[3][0].center == (8.0, 6.5)
    assert inp.targets[3][0] == (12.0, 6.5)
    assert all(len(s.labels) == 9 for s in (f[0] for f in inp.handles))
    assert all(np.all(m == 1.0) for m in inp.masks)


def test_oracle_failure_is_wrapped():
    with pytest.raises(PropagationError, match="frame 0"):
        propagate_all([(5.0, 5.0)], [(9.0, 5.0)], [], 3, (20, 20), Labels(*[FG] * 9), Broken())
