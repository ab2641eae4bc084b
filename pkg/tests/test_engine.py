import numpy as np
import pytest

from dragvideo.engine import DragSpec, RunConfig, run
from dragvideo.synth import GroundTruthCorrespondence, GroundTruthSegmenter, SceneSpec, render_scene


@pytest.fixture(scope="module")
def small():
    truth = render_scene(SceneSpec(frames=3, size=(32, 32), velocity=(1.0, 0.0)))
    return truth, GroundTruthSegmenter(truth), GroundTruthCorrespondence(truth)


def _drag(truth, dx=4.0):
    c = truth.spec.pose(0)[0]
    return DragSpec(handles=((c[0], c[1]),), targets=((c[0] + dx, c[1]),))


def test_run_config_validation():
    for bad in (dict(max_iterations=0), dict(tolerance=0.0), dict(tracking_reference="nope"),
                dict(supervision_steps_per_track=0)):
        with pytest.raises(ValueError):
            RunConfig(**bad)
    with pytest.raises(ValueError):
        DragSpec(handles=((1, 1),), targets=())


def test_degenerate_drag_returns_input(small):
    truth, seg, corr = small
    c = truth.spec.pose(0)[0]
    edited, report = run(truth.video, DragSpec(((c[0], c[1]),), ((c[0], c[1]),)), RunConfig(), seg, corr)
    assert report.iterations == 0 and report.converged and report.diagnostic == "nothing to drag"
    assert all(np.array_equal(a, b) for a, b in zip(edited, truth.video))


def test_out_of_bounds_rejected(small):
    truth, seg, corr = small
    with pytest.raises(ValueError, match="out of bounds"):
        run(truth.video, DragSpec(((-1.0, 5.0),), ((3.0, 5.0),)), RunConfig(), seg, corr)


def test_short_run_moves_handles_and_logs(small):
    truth, seg, corr = small
    calls = []
    edited, report = run(truth.video, _drag(truth), RunConfig(max_iterations=5), seg, corr,
                         on_iteration=lambda k, state, br, before: calls.append((k, br.total)))
    assert report.iterations == len(calls) == 5
    assert [r.k for r in report.records] == list(range(5))
    assert len(report.trajectories[0][0]) == 6
    assert report.smoothness_input is not None and report.smoothness_edited is not None
    assert not all(np.array_equal(a, b) for a, b in zip(edited, truth.video))
    d = report.to_dict()
    assert "wall_clock" in d and "wall_clock" not in report.to_dict(include_wall_clock=False)


def test_determinism(small):
    truth, seg, corr = small
    cfg = RunConfig(max_iterations=4, compute_metrics=False)
    a = run(truth.video, _drag(truth), cfg, seg, corr)
    b = run(truth.video, _drag(truth), cfg, seg, corr)
    assert all(np.array_equal(x, y) for x, y in zip(a[0], b[0]))
    assert a[1].to_dict(False) == b[1].to_dict(False)


@pytest.mark.parametrize("mode", ["initial", "ema", "current"])
def test_reference_modes_run(small, mode):
    truth, seg, corr = small
    _, report = run(truth.video, _drag(truth), RunConfig(max_iterations=2, tracking_reference=mode,
                                                          compute_metrics=False), seg, corr)
    assert report.iterations == 2


def test_two_clicks(small):
    truth, seg, corr = small
    c = truth.spec.pose(0)[0]
    drag = DragSpec(((c[0] - 2, c[1]), (c[0] + 2, c[1])), ((c[0] - 2, c[1] - 3), (c[0] + 2, c[1] + 3)))
    _, report = run(truth.video, drag, RunConfig(max_iterations=3, compute_metrics=False), seg, corr)
    assert len(report.records[0].deltas) == 2 and len(report.records[0].handles) == 2


def test_non_finite_state_aborts(small):
    truth, seg, corr = small

    def poison(k, state, breakdown, before):
        for key in state.stack.offsets:
            state.stack.offsets[key][:] = np.nan

    _, report = run(truth.video, _drag(truth), RunConfig(max_iterations=5, compute_metrics=False),
                    seg, corr, on_iteration=poison)
    assert report.aborted and "non-finite" in report.diagnostic
