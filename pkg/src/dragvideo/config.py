"""JSON run configuration: parsing, validation, defaults and serialization.

Schema (all sections except ``drag`` and one of ``scene``/``input_dir`` optional)::

    {
      "scene": {"kind": "translating_blob", "frames": 4, "size": [64, 64],
                "velocity": [2.0, 0.0], "angular_rate": 0.0, "jitter": 0.0,
                "texture_seed": 0, "center": null, "object_size": null,
                "spire_width": 1.5, "channels": 3},
      "input_dir": "frames/",                 # instead of "scene"
      "drag": {"handles": [[x, y]], "targets": [[x, y]], "mask_points": [[x, y]]},
      "params": {"timesteps": [42, 41, 35, 30], "max_range": 3.0, ...},
      "output_dir": "out"
    }

Coordinates are ``(x, y)`` in pixels with the origin at the center of the
top-left cell of frame 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .engine import DragSpec, RunConfig
from .supervise import SupervisionConfig
from .synth import SceneSpec
from .track import TrackConfig


class ConfigError(ValueError):
    pass


TOP_KEYS = {"scene", "input_dir", "drag", "params", "output_dir"}
DRAG_KEYS = {"handles", "targets", "mask_points"}
SCENE_KEYS = {f.name for f in fields(SceneSpec)}

# hyperparameter defaults; the first block are the published settings
PARAM_DEFAULTS = {
    "timesteps": [42, 41, 35, 30],
    "max_range": 3.0,
    "learning_rate": 0.01,
    "max_iterations": 60,
    "optimizer": "adam",
    "weight_decay": 0.0,
    "supervision_patch_radius": 1,
    "tracking_patch_radius": 2,
    "candidate_step": 0.5,
    "mask_weight": 0.1,
    "ema": 0.8,
    "tolerance": 1.0,
    "seed": 0,
    "handle_radius": 1,
    "mask_radius": 4,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "tracking_reference": "initial",
    "supervision_steps_per_track": 1,
    "shared_noise": True,
    "feature_gain": 1.0,
}


@dataclass(frozen=True)
class ConfigFile:
    drag: DragSpec
    params: dict
    scene: SceneSpec | None = None
    input_dir: str | None = None
    output_dir: str = "out"

    def run_config(self) -> RunConfig:
        p = self.params
        return RunConfig(
            max_iterations=int(p["max_iterations"]),
            tolerance=float(p["tolerance"]),
            supervision=SupervisionConfig(
                patch_radius=int(p["supervision_patch_radius"]),
                mask_weight=float(p["mask_weight"]),
                ema=float(p["ema"]),
                learning_rate=float(p["learning_rate"]),
                timesteps=tuple(int(t) for t in p["timesteps"]),
                beta1=float(p["adam_beta1"]),
                beta2=float(p["adam_beta2"]),
                adam_eps=float(p["adam_eps"]),
                weight_decay=float(p["weight_decay"]),
            ),
            tracking=TrackConfig(
                max_range=float(p["max_range"]),
                step=float(p["candidate_step"]),
                patch_radius=int(p["tracking_patch_radius"]),
            ),
            handle_radius=int(p["handle_radius"]),
            mask_radius=int(p["mask_radius"]),
            seed=int(p["seed"]),
            feature_gain=float(p["feature_gain"]),
            supervision_steps_per_track=int(p["supervision_steps_per_track"]),
            tracking_reference=str(p["tracking_reference"]),
            shared_noise=bool(p["shared_noise"]),
        )

    def to_dict(self) -> dict:
        out = {
            "drag": {
                "handles": [list(p) for p in self.drag.handles],
                "targets": [list(p) for p in self.drag.targets],
                "mask_points": [list(p) for p in self.drag.mask_points],
            },
            "params": dict(self.params),
            "output_dir": self.output_dir,
        }
        if self.scene is not None:
            scene = asdict(self.scene)
            scene["size"] = list(scene["size"])
            scene["velocity"] = list(scene["velocity"])
            if scene["center"] is not None:
                scene["center"] = list(scene["center"])
            out["scene"] = scene
        else:
            out["input_dir"] = self.input_dir
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _unknown(keys, allowed, where: str) -> None:
    extra = sorted(set(keys) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key {extra[0]!r} in {where}")


def _points(raw, key: str) -> tuple:
    if not isinstance(raw, list):
        raise ConfigError(f"{key!r} must be a list of [x, y] pairs")
    pts = []
    for p in raw:
        if not (isinstance(p, (list, tuple)) and len(p) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)):
            raise ConfigError(f"malformed point {p!r} in {key!r}")
        pts.append((float(p[0]), float(p[1])))
    return tuple(pts)


def _scene(raw: dict) -> SceneSpec:
    if not isinstance(raw, dict):
        raise ConfigError("'scene' must be an object")
    _unknown(raw, SCENE_KEYS, "scene")
    kwargs = dict(raw)
    for key in ("size", "velocity", "center"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    try:
        return SceneSpec(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'scene': {exc}") from exc


def from_dict(raw: dict, base_dir: Path | None = None) -> ConfigFile:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _unknown(raw, TOP_KEYS, "config")
    has_scene, has_dir = "scene" in raw, "input_dir" in raw
    if has_scene == has_dir:
        raise ConfigError("exactly one of 'scene' or 'input_dir' is required")
    if "drag" not in raw:
        raise ConfigError("missing required key 'drag'")
    drag_raw = raw["drag"]
    if not isinstance(drag_raw, dict):
        raise ConfigError("'drag' must be an object")
    _unknown(drag_raw, DRAG_KEYS, "drag")
    for key in ("handles", "targets"):
        if key not in drag_raw:
            raise ConfigError(f"missing required key {key!r}")
    handles = _points(drag_raw["handles"], "handles")
    targets = _points(drag_raw["targets"], "targets")
    mask_points = _points(drag_raw.get("mask_points", []), "mask_points")
    if not handles:
        raise ConfigError("'handles' must contain at least one point")
    if len(handles) != len(targets):
        raise ConfigError("'handles' and 'targets' must have the same length")

    params_raw = raw.get("params", {})
    if not isinstance(params_raw, dict):
        raise ConfigError("'params' must be an object")
    _unknown(params_raw, PARAM_DEFAULTS, "params")
    params = {**PARAM_DEFAULTS, **params_raw}
    params["timesteps"] = [int(t) for t in params["timesteps"]]
    if str(params["optimizer"]).lower() != "adam":
        raise ConfigError("'optimizer' must be 'adam'")

    scene = input_dir = None
    if has_scene:
        scene = _scene(raw["scene"])
        h, w = scene.size
    else:
        input_dir = str(raw["input_dir"])
        from .frames import load_frames
        path = Path(input_dir)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            frames = load_frames(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"'input_dir': {exc}") from exc
        h, w = frames[0].shape[:2]
    for key, pts in (("handles", handles), ("targets", targets), ("mask_points", mask_points)):
        for x, y in pts:
            if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                raise ConfigError(f"point ({x}, {y}) in {key!r} is out of bounds")

    cfg = ConfigFile(DragSpec(handles, targets, mask_points), params, scene, input_dir,
                     str(raw.get("output_dir", "out")))
    try:
        cfg.run_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'params': {exc}") from exc
    return cfg


def parse_config(path) -> ConfigFile:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(raw, base_dir=path.parent)
