"""Command line entry point: ``run``, ``render`` and ``metric``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from PIL import Image

from .config import ConfigError, ConfigFile, parse_config
from .engine import RunReport, run
from .frames import comparison_strip, load_frames, save_frames
from .metrics import BlockMatchFlow, smoothness
from .synth import (
    AllForeground,
    FlowCorrespondence,
    GroundTruthCorrespondence,
    GroundTruthSegmenter,
    render_scene,
)

log = logging.getLogger("dragvideo")


def _output_dir(cfg: ConfigFile, override: str | None) -> Path:
    out = Path(override or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def load_inputs(cfg: ConfigFile, config_dir: Path | None = None):
    """Frames plus segmentation/correspondence oracles for a config.

    Synthetic scenes use their ground truth; frame directories use block-matching
    flow for correspondence and label every point foreground.
    """
    if cfg.scene is not None:
        truth = render_scene(cfg.scene)
        return truth.video, GroundTruthSegmenter(truth), GroundTruthCorrespondence(truth)
    path = Path(cfg.input_dir)
    if config_dir is not None and not path.is_absolute():
        path = config_dir / path
    frames = load_frames(path)
    flows = [f.flow for f in BlockMatchFlow()(frames)] if len(frames) > 1 else []
    return frames, AllForeground(), FlowCorrespondence(flows)


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_trajectory(path: Path, report: RunReport) -> None:
    """One JSON record per iteration; handle coordinates are per click, per frame."""
    with open(path, "w") as fh:
        for rec in report.records:
            fh.write(json.dumps({
                "k": rec.k,
                "loss": {"total": rec.total_loss, "drag": rec.drag_loss, "mask": rec.mask_loss},
                "delta_p": rec.deltas,
                "directions": rec.directions,
                "steps": rec.steps,
                "capped": rec.capped,
                "handles": rec.handles,
                "mean_distance": rec.mean_distance,
            }, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = _output_dir(cfg, args.output)
    video, seg, corr = load_inputs(cfg, Path(args.config).parent)
    drag_cfg = cfg.run_config()
    edited, report = run(video, cfg.drag, drag_cfg, seg, corr)

    save_frames(out / "input", video)
    save_frames(out / "edited", edited)
    (out / "compare").mkdir(exist_ok=True)
    n_clicks = len(cfg.drag.handles)
    for i, (before, after) in enumerate(zip(video, edited)):
        strip = comparison_strip(
            before, after,
            [report.initial_handles[c][i] for c in range(n_clicks)],
            [report.trajectories[c][i][-1] for c in range(n_clicks)],
            [report.targets[c][i] for c in range(n_clicks)],
        )
        Image.fromarray(strip).save(out / "compare" / f"compare_{i:03d}.png", format="PNG")
    write_trajectory(out / "trajectory.jsonl", report)
    payload = report.to_dict(include_wall_clock=False)
    payload.pop("records")
    payload["config"] = cfg.to_dict()
    _dump_json(out / "report.json", payload)
    # kept apart so that reruns leave report.json byte-identical
    _dump_json(out / "timing.json", {"wall_clock_seconds": report.wall_clock})

    print(f"iterations: {report.iterations}  distance: {report.initial_distance:.3f} -> "
          f"{report.final_distance:.3f}  converged: {report.converged}")
    if report.smoothness_edited is not None:
        print(f"smoothness input: {report.smoothness_input.mean:.4f}  "
              f"edited: {report.smoothness_edited.mean:.4f}")
    if report.aborted:
        print(f"error: run aborted: {report.diagnostic}", file=sys.stderr)
        return 3
    return 0


def cmd_render(args) -> int:
    cfg = parse_config(args.config)
    out = _output_dir(cfg, args.output)
    video, _, _ = load_inputs(cfg, Path(args.config).parent)
    save_frames(out / "input", video)
    print(f"wrote {len(video)} frames to {out / 'input'}")
    return 0


def cmd_metric(args) -> int:
    a = load_frames(args.input_dir)
    b = load_frames(args.edited_dir)
    if len(a) != len(b):
        raise ValueError(f"frame counts differ: {len(a)} vs {len(b)}")
    if a[0].shape != b[0].shape:
        raise ValueError(f"frame sizes differ: {a[0].shape} vs {b[0].shape}")
    res = smoothness(a, b, BlockMatchFlow(args.window, args.search))
    print(f"filtered mean:   {res.mean:.6f}")
    print(f"raw input mean:  {res.raw_input_mean:.6f}")
    print(f"raw edited mean: {res.raw_edited_mean:.6f}")
    print(f"kept fraction:   {res.kept_fraction:.6f}")
    if args.json:
        print(json.dumps(res.to_dict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dragvideo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full drag pipeline")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help="override the config's output_dir")
    p_run.set_defaults(func=cmd_run)

    p_render = sub.add_parser("render", help="render the configured scene only")
    p_render.add_argument("config")
    p_render.add_argument("-o", "--output", help="override the config's output_dir")
    p_render.set_defaults(func=cmd_render)

    p_metric = sub.add_parser("metric", help="temporal smoothness of an edited video")
    p_metric.add_argument("input_dir")
    p_metric.add_argument("edited_dir")
    p_metric.add_argument("--window", type=int, default=8)
    p_metric.add_argument("--search", type=int, default=4)
    p_metric.add_argument("--json", action="store_true", help="also print a JSON line")
    p_metric.set_defaults(func=cmd_metric)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
