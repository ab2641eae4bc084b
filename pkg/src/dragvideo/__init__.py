"""Temporally consistent point-based dragging of short videos.

A desk-scale, fully deterministic reimplementation of a drag-editing pipeline:
handle/target/mask propagation across frames, latent motion supervision over
several noise timesteps, temporally shared point tracking, and a temporal
smoothness metric. Every learned component is replaced by an analytic stand-in
(synthetic scenes with ground-truth flow, a blur/tanh feature backbone) so that
the whole loop can be verified exactly.
"""

from .backbone import FeatureExtractor, LatentStack, NoiseSchedule, decode, decode_sequential
from .config import ConfigError, ConfigFile, PARAM_DEFAULTS, from_dict, parse_config
from .core import Label, Point, PointSet
from .engine import DragSpec, IterationRecord, RunConfig, RunReport, run
from .metrics import BlockMatchFlow, GroundTruthFlow, block_match_flow, smoothness
from .propagate import PropagationError, propagate_all, propagate_handles, propagate_targets
from .supervise import DEFAULT_TIMESTEPS, SupervisionConfig, supervision_loss
from .synth import SceneSpec, SceneTruth, render_scene
from .track import TrackConfig, track_step

__all__ = [
    "BlockMatchFlow", "ConfigError", "ConfigFile", "DragSpec", "FeatureExtractor",
    "GroundTruthFlow", "IterationRecord", "Label", "LatentStack", "NoiseSchedule",
    "DEFAULT_TIMESTEPS", "PARAM_DEFAULTS", "Point", "PointSet", "PropagationError", "RunConfig",
    "RunReport", "SceneSpec", "SceneTruth", "SupervisionConfig", "TrackConfig",
    "block_match_flow", "decode", "decode_sequential", "from_dict", "parse_config",
    "propagate_all", "propagate_handles", "propagate_targets", "render_scene", "run",
    "smoothness", "supervision_loss", "track_step",
]
