"""Pipeline driver: propagate, invert, alternate supervision and tracking, decode."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backbone import FeatureExtractor, LatentStack, NoiseSchedule
from .core import Grid2D, as_grid
from .metrics import BlockMatchFlow, FlowProvider, SmoothnessResult, smoothness
from .propagate import PropagatedInputs, propagate_all
from .supervise import (
    EmaFeatureBank,
    NonFiniteGradient,
    SupervisionConfig,
    adam_step,
    averaged_handle_feature,
    drag_direction,
    inner_patch_index,
    sample_patches,
    supervision_loss,
)
from .synth import Correspondence, Segmenter
from .track import TrackConfig, track_step

log = logging.getLogger(__name__)

# "initial": frame-averaged handle patches of iteration 0 (the unedited input)
# "ema": the running supervision reference; "current": each frame's pre-update patches
REFERENCE_MODES = ("initial", "ema", "current")


@dataclass(frozen=True)
class DragSpec:
    handles: tuple[tuple[float, float], ...]
    targets: tuple[tuple[float, float], ...]
    mask_points: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "handles", tuple(tuple(map(float, p)) for p in self.handles))
        object.__setattr__(self, "targets", tuple(tuple(map(float, p)) for p in self.targets))
        object.__setattr__(self, "mask_points", tuple(tuple(map(float, p)) for p in self.mask_points))
        if not self.handles:
            raise ValueError("drag spec needs at least one handle/target pair")
        if len(self.handles) != len(self.targets):
            raise ValueError("every handle needs exactly one target")


@dataclass(frozen=True)
class RunConfig:
    max_iterations: int = 60
    tolerance: float = 1.0
    supervision: SupervisionConfig = field(default_factory=SupervisionConfig)
    tracking: TrackConfig = field(default_factory=TrackConfig)
    handle_radius: int = 1
    mask_radius: int = 4
    seed: int = 0
    feature_gain: float = 1.0
    supervision_steps_per_track: int = 1
    tracking_reference: str = "initial"
    shared_noise: bool = True
    compute_metrics: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.supervision_steps_per_track < 1:
            raise ValueError("supervision_steps_per_track must be >= 1")
        if self.tracking_reference not in REFERENCE_MODES:
            raise ValueError(f"tracking_reference must be one of {REFERENCE_MODES}")


@dataclass
class IterationRecord:
    k: int
    total_loss: float
    drag_loss: float
    mask_loss: float
    deltas: list[float]                     # per click
    objectives: list[float]                 # per click
    mean_distance: float
    handles: list[list[list[float]]]        # [click][frame] -> center (x, y) after tracking
    directions: list[list[list[float] | None]]
    steps: list[list[list[float]]]          # [click][frame] applied displacement
    capped: list[list[bool]]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    records: list[IterationRecord] = field(default_factory=list)
    initial_handles: list[list[list[float]]] = field(default_factory=list)   # [click][frame]
    targets: list[list[list[float]]] = field(default_factory=list)           # [click][frame]
    trajectories: list[list[list[list[float]]]] = field(default_factory=list)  # [click][frame][k]
    initial_distance: float = 0.0
    final_distance: float = 0.0
    converged: bool = False
    aborted: bool = False
    diagnostic: str = ""
    wall_clock: float = 0.0
    smoothness_input: SmoothnessResult | None = None
    smoothness_edited: SmoothnessResult | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        out = {
            "iterations": self.iterations,
            "converged": self.converged,
            "aborted": self.aborted,
            "diagnostic": self.diagnostic,
            "initial_distance": self.initial_distance,
            "final_distance": self.final_distance,
            "initial_handles": self.initial_handles,
            "targets": self.targets,
            "trajectories": self.trajectories,
            "records": [r.to_dict() for r in self.records],
            "smoothness": {
                "input": self.smoothness_input.to_dict() if self.smoothness_input else None,
                "edited": self.smoothness_edited.to_dict() if self.smoothness_edited else None,
            },
        }
        if include_wall_clock:
            out["wall_clock"] = self.wall_clock
        return out


def _mean_distance(handles, targets) -> float:
    dists = [math.hypot(q[0] - h[len(h) // 2][0], q[1] - h[len(h) // 2][1])
             for frame_h, frame_q in zip(handles, targets) for h, q in zip(frame_h, frame_q)]
    return float(np.mean(dists))


@dataclass
class EngineState:
    """Mutable loop state; exposed to ``on_iteration`` callbacks as a snapshot source."""

    stack: LatentStack
    extractor: FeatureExtractor
    inputs: PropagatedInputs
    handles: list[list[np.ndarray]]        # [frame][click] -> (n, 2)
    targets: list[list[np.ndarray]]        # [frame][click] -> (2,)
    bank: EmaFeatureBank


def run(video: Sequence[Grid2D], drag: DragSpec, cfg: RunConfig, seg: Segmenter,
        corr: Correspondence, flow: FlowProvider | None = None,
        on_iteration: Callable | None = None):
    """Drag every frame of ``video``; returns ``(edited_frames, RunReport)``.

    ``flow`` estimates motion for the smoothness scores of both the input and
    the edited video (block matching by default).
    ``on_iteration(k, state, breakdown, offsets_before)`` is called after each
    supervision step, before tracking.
    """
    started = time.perf_counter()
    frames = [as_grid(f) for f in video]
    h, w, channels = frames[0].shape
    for p in (*drag.handles, *drag.targets, *drag.mask_points):
        if not (0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1):
            raise ValueError(f"point {p} is out of bounds for a {w}x{h} frame")
    report = RunReport()

    sup, trk = cfg.supervision, cfg.tracking
    inputs = propagate_all(drag.handles, drag.targets, drag.mask_points, len(frames), (h, w),
                           seg, corr, cfg.handle_radius, cfg.mask_radius)
    handles = [[s.points.copy() for s in frame_sets] for frame_sets in inputs.handles]
    targets = [[np.array(q, dtype=np.float64) for q in frame_q] for frame_q in inputs.targets]
    n_clicks = len(drag.handles)
    report.initial_handles = [[handles[i][c][len(handles[i][c]) // 2].tolist()
                               for i in range(len(frames))] for c in range(n_clicks)]
    report.targets = [[targets[i][c].tolist() for i in range(len(frames))] for c in range(n_clicks)]
    report.trajectories = [[[pt] for pt in click] for click in report.initial_handles]
    report.initial_distance = _mean_distance(handles, targets)

    stack = LatentStack.build(frames, sup.timesteps, NoiseSchedule(), cfg.seed, cfg.shared_noise)
    extractor = FeatureExtractor(channels, gain=cfg.feature_gain, seed=cfg.seed)
    bank = EmaFeatureBank(sup.ema)
    state = EngineState(stack, extractor, inputs, handles, targets, bank)

    if all(tuple(p) == tuple(q) for p, q in zip(drag.handles, drag.targets)):
        report.diagnostic = "nothing to drag"
        report.converged = True
    bank_radius = max(sup.patch_radius, trk.patch_radius)
    sup_idx = inner_patch_index(bank_radius, sup.patch_radius)
    trk_idx = inner_patch_index(bank_radius, trk.patch_radius)
    n_frames = len(frames)

    for k in range(cfg.max_iterations):
        if report.converged:
            break
        if _mean_distance(handles, targets) <= cfg.tolerance:
            report.converged = True
            break
        feats = {(i, t): extractor(stack.x(i, t), t) for i, t in stack.keys()}
        for c in range(n_clicks):
            for t in stack.timesteps:
                avg = averaged_handle_feature([handles[i][c] for i in range(n_frames)],
                                              [feats[i, t] for i in range(n_frames)], bank_radius)
                bank.update((c, t), avg)
        refs = {key: ref[:, sup_idx] for key, ref in bank.reference.items()}
        directions = [[drag_direction(handles[i][c][len(handles[i][c]) // 2], targets[i][c])
                       for c in range(n_clicks)] for i in range(n_frames)]

        breakdown = None
        try:
            for rep in range(cfg.supervision_steps_per_track):
                offsets_before = stack.snapshot_offsets() if on_iteration else None
                result = supervision_loss(stack, extractor, handles, directions, refs,
                                          inputs.masks, sup, features=feats if rep == 0 else None)
                if not math.isfinite(result.total):
                    raise NonFiniteGradient("non-finite loss")
                if breakdown is None:
                    breakdown = result
                adam_step(stack, result.grads, sup)
        except NonFiniteGradient as exc:
            report.aborted = True
            report.diagnostic = f"iteration {k}: {exc}"
            log.warning("aborting run: %s", report.diagnostic)
            break
        if on_iteration is not None:
            on_iteration(k, state, breakdown, offsets_before)

        new_feats = {(i, t): extractor(stack.x(i, t), t) for i, t in stack.keys()}
        deltas, objectives = [], []
        steps_log, capped_log = [], []
        try:
            for c in range(n_clicks):
                references = {}
                for t in stack.timesteps:
                    if cfg.tracking_reference == "ema":
                        references[t] = bank.reference[c, t][:, trk_idx]
                    elif cfg.tracking_reference == "initial":
                        references[t] = bank.initial[c, t][:, trk_idx]
                    else:
                        references[t] = [sample_patches(feats[i, t], handles[i][c], trk.patch_radius)
                                         for i in range(n_frames)]
                res = track_step([handles[i][c] for i in range(n_frames)],
                                 [directions[i][c] for i in range(n_frames)], references,
                                 {t: [new_feats[i, t] for i in range(n_frames)] for t in stack.timesteps},
                                 [targets[i][c] for i in range(n_frames)], trk)
                for i in range(n_frames):
                    handles[i][c] = res.handles[i]
                deltas.append(res.delta)
                objectives.append(res.objective)
                steps_log.append([s.tolist() for s in res.steps])
                capped_log.append(list(res.capped))
        except FloatingPointError as exc:
            report.aborted = True
            report.diagnostic = f"iteration {k}: {exc}"
            log.warning("aborting run: %s", report.diagnostic)
            break

        centers = [[handles[i][c][len(handles[i][c]) // 2].tolist() for i in range(n_frames)]
                   for c in range(n_clicks)]
        for c in range(n_clicks):
            for i in range(n_frames):
                report.trajectories[c][i].append(centers[c][i])
        record = IterationRecord(
            k=k,
            total_loss=breakdown.total,
            drag_loss=breakdown.drag,
            mask_loss=breakdown.mask,
            deltas=deltas,
            objectives=objectives,
            mean_distance=_mean_distance(handles, targets),
            handles=centers,
            directions=[[None if directions[i][c] is None else directions[i][c].tolist()
                         for i in range(n_frames)] for c in range(n_clicks)],
            steps=steps_log,
            capped=capped_log,
        )
        report.records.append(record)
        log.debug("iter %d loss %.4f dist %.3f dp %s", k, record.total_loss,
                  record.mean_distance, deltas)
        if record.mean_distance <= cfg.tolerance:
            report.converged = True

    report.final_distance = _mean_distance(handles, targets)
    edited = decode_all(stack)
    if cfg.compute_metrics and n_frames >= 3:
        provider = flow or BlockMatchFlow()
        report.smoothness_input = smoothness(frames, frames, provider)
        report.smoothness_edited = smoothness(frames, edited, provider)
    report.wall_clock = time.perf_counter() - started
    return edited, report


def decode_all(stack: LatentStack) -> list[Grid2D]:
    return stack.decode_all()
