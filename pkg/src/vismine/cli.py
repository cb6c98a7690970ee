"""``vislog`` command line: detect, analyze, mine, generate, synth.

Exit status is 0 on success, 2 for invalid input (bad arguments, config,
log or spec) and 3 when the pipeline itself fails.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from vismine import detection, mining, synthgui, tracking, vislog
from vismine.detection import DetectorConfig, FrameDetection
from vismine.errors import InvalidInputError, LoadError, TextDetectionError, ValidationError
from vismine.imaging import gray
from vismine.tracking import StepData, TrackingConfig

log = logging.getLogger("vislog")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 2, 3
TYPE_COLORS = {"text": (0, 90, 255), "icon": (0, 170, 0), "comb": (230, 0, 0)}


@dataclass
class MiningConfig:
    n: int = 3
    k: float = 1.0
    min_support: int = 2
    min_len: int = 2
    max_len: int = 12
    z_threshold: float = 3.0

    def __post_init__(self):
        if not isinstance(self.n, int) or not (2 <= self.n <= 5):
            raise InvalidInputError("mining.n must be an integer in [2, 5]")
        if not self.k > 0:
            raise InvalidInputError("mining.k must be > 0")
        if not isinstance(self.min_support, int) or self.min_support < 1:
            raise InvalidInputError("mining.min_support must be a positive integer")
        if not (2 <= self.min_len <= self.max_len <= mining.MAX_PATTERN_LEN):
            raise InvalidInputError(f"need 2 <= min_len <= max_len <= {mining.MAX_PATTERN_LEN}")
        if not self.z_threshold > 0:
            raise InvalidInputError("mining.z_threshold must be > 0")


@dataclass
class PipelineConfig:
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    theta: float = vislog.DEFAULT_THETA
    delay: int = vislog.DEFAULT_DELAY
    mining: MiningConfig = field(default_factory=MiningConfig)
    text_detector: str = "none"
    workers: int = 1

    def __post_init__(self):
        if not (0 < self.theta < 1):
            raise InvalidInputError("theta must be in (0, 1)")
        if not isinstance(self.delay, int) or self.delay < 0:
            raise InvalidInputError("delay must be a non-negative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise InvalidInputError("workers must be a positive integer")
        if not isinstance(self.text_detector, str):
            raise InvalidInputError("text_detector must be a string")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a JSON object")
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        try:
            if "detector" in kw:
                kw["detector"] = DetectorConfig.from_dict(kw["detector"])
            if "tracking" in kw:
                kw["tracking"] = TrackingConfig.from_dict(kw["tracking"])
            if "mining" in kw:
                sub = kw["mining"]
                bad = set(sub) - {f.name for f in fields(MiningConfig)}
                if bad:
                    raise InvalidInputError(f"unknown mining config keys: {sorted(bad)}")
                kw["mining"] = MiningConfig(**sub)
            return cls(**kw)
        except TypeError as exc:
            raise InvalidInputError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# per-frame detection, optionally fanned out to worker processes

def _detect_one(args) -> dict:
    frame, detector, cfg = args
    return detection.detect_frame(frame.image, detector, cfg, frame.index, frame.path).to_json()


def detect_frames(frames: Sequence[vislog.Frame], detector, cfg: DetectorConfig,
                  workers: int = 1) -> list[FrameDetection]:
    jobs = [(f, detector, cfg) for f in frames]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_detect_one, jobs))
    else:
        results = [_detect_one(j) for j in jobs]
    return [FrameDetection.from_json(r) for r in results]


def _make_detector(vlog: vislog.VisualLog, spec: str):
    truth = vlog.root / synthgui.TRUTH_NAME if vlog.root is not None else None
    return detection.make_text_detector(spec, truth)


def annotate(frame: vislog.Frame, det: FrameDetection, path: Path) -> None:
    """Save the frame with 1-px bbox outlines colored by element type."""
    img = frame.image
    data = np.round(img.data * 255).astype(np.uint8)
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    else:
        data = data.copy()
    for e in det.elements:
        x, y, w, h = e.bbox
        c = TYPE_COLORS[e.etype]
        data[y, x:x + w] = c
        data[y + h - 1, x:x + w] = c
        data[y:y + h, x] = c
        data[y:y + h, x + w - 1] = c
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path, format="PNG", compress_level=6)


def run_detect(log_dir: str | Path, cfg: PipelineConfig, out_dir: str | Path) -> list[FrameDetection]:
    vlog = vislog.load_log(log_dir)
    detector = _make_detector(vlog, cfg.text_detector)
    majors = vislog.detect_major_events(vlog, cfg.theta, cfg.workers)
    sampled = vislog.sample_frames(vlog, majors, cfg.delay)
    dets = detect_frames(sampled, detector, cfg.detector, cfg.workers)
    out = Path(out_dir)
    for frame, det in zip(sampled, dets):
        _write_json(out / f"f{frame.index:04d}" / "elements.json", det.to_json())
        annotate(frame, det, out / "annotated" / f"f{frame.index:04d}.png")
    _write_json(out / "summary.json", {
        "log": vlog.name,
        "frames": len(vlog.frames),
        "major_events": [{"frame": m.frame_index, "mse": m.mse} for m in majors],
        "sampled": [f.index for f in sampled],
    })
    return dets


def build_steps(vlog: vislog.VisualLog, cfg: PipelineConfig) -> list[StepData]:
    """Detect elements on every frame that differs from a neighbour and pair them into steps."""
    detector = _make_detector(vlog, cfg.text_detector)
    series = vislog.mse_series(vlog, cfg.workers)
    majors = {m.frame_index for m in vislog.major_events_from_series(series, cfg.theta)}
    changed = [i for i, m in enumerate(series) if m > 0]
    needed = sorted({i for s in changed for i in (s, s + 1)})

    # identical pixels give identical detections: run each distinct image once
    grays: dict[int, np.ndarray] = {}
    keys: dict[int, str] = {}
    first: dict[str, int] = {}
    for i in needed:
        g = gray(vlog.frames[i].image).data
        keys[i] = hashlib.sha1(np.ascontiguousarray(g).tobytes()).hexdigest()
        first.setdefault(keys[i], i)
        grays[i] = g
    uniq = sorted(first.values())
    found = detect_frames([vlog.frames[i] for i in uniq], detector, cfg.detector, cfg.workers)
    by_key = {keys[i]: d for i, d in zip(uniq, found)}

    steps = []
    for s in changed:
        prev, nxt = by_key[keys[s]], by_key[keys[s + 1]]
        match = tracking.match_elements(prev.elements, grays[s], nxt.elements, grays[s + 1], cfg.tracking)
        steps.append(StepData(s, vlog.frames[s].t_ms, vlog.frames[s + 1].t_ms, prev, nxt, match,
                              grays[s], grays[s + 1], (s + 1) in majors))
    return steps


def analyze_log(vlog: vislog.VisualLog, cfg: PipelineConfig) -> tracking.InteractionSequence:
    steps = build_steps(vlog, cfg)
    return tracking.infer_interactions(steps, vlog.events, vlog.has_events_stream, vlog.screen,
                                       cfg.tracking, vlog.name)


def run_analyze(log_dir: str | Path, cfg: PipelineConfig, out_dir: str | Path) -> tracking.InteractionSequence:
    vlog = vislog.load_log(log_dir)
    seq = analyze_log(vlog, cfg)
    _write_json(Path(out_dir) / "interactions.json", seq.to_json())
    return seq


def run_mine(files: Sequence[str | Path], cfg: PipelineConfig, out_dir: str | Path) -> dict:
    corpus = []
    for f in files:
        corpus.append(tracking.tokenize(tracking.read_interactions(f)))
    if not corpus:
        raise InvalidInputError("no interactions files given")
    m = cfg.mining
    if not any(corpus):
        raise InvalidInputError("corpus is empty: no interactions in any file")
    model = mining.train(corpus, m.n, m.k)
    patterns = mining.mine_patterns(corpus, m.min_support, m.min_len, m.max_len, model)
    anomalies = mining.detect_anomalies(model, corpus, m.z_threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mining.save_model(model, out / "model.json")
    _write_json(out / "patterns.json", [p.to_json() for p in patterns])
    stats = mining.corpus_stats(corpus)
    stats["patterns"] = len(patterns)
    stats["anomalies"] = [{"file": str(files[i]), "mean_logprob": s} for i, s in anomalies]
    return stats


def run_synth(spec: str, out_dir: str | Path) -> Path:
    if spec.startswith("demo:"):
        path = synthgui.demo_path(spec[len("demo:"):])
        if not path.is_file():
            raise InvalidInputError(f"no bundled demo named {spec[len('demo:'):]!r}")
    else:
        path = Path(spec)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read spec {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"spec {path} must be a JSON object")
    if "screens" not in data and "elements" in data:
        # a single screen: a one-frame log
        w, h = data.get("width", 1136), data.get("height", 640)
        data = {"version": 1, "screen": {"width": w, "height": h}, "seed": data.get("seed", 0),
                "start": "main", "screens": {"main": data}, "script": [], "hold_frames": 1}
    return synthgui.render_log(synthgui.ScriptSpec.from_dict(data), out_dir)


# --------------------------------------------------------------------------
# argument handling

def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # the same flags on the main parser and every subcommand; SUPPRESS keeps
    # a subcommand from clobbering a value given before it
    p = argparse.ArgumentParser(add_help=False, argument_default=None if defaults else argparse.SUPPRESS)
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--workers", type=int, help="worker processes for per-frame work")
    p.add_argument("--text-detector", dest="text_detector", help="none | oracle | external:<cmd>")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=False if defaults else argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vislog", parents=[_global_flags(True)],
                                     description="Mine GUI interactions from recorded screen logs.")
    sub = parser.add_subparsers(dest="command", required=True)
    g = [_global_flags(False)]

    p = sub.add_parser("detect", parents=g, help="detect GUI elements on sampled frames")
    p.add_argument("log", help="log directory or vislog.json")

    p = sub.add_parser("analyze", parents=g, help="infer the interaction sequence of a log")
    p.add_argument("log", help="log directory or vislog.json")

    p = sub.add_parser("mine", parents=g, help="train the n-gram model and mine usage patterns")
    p.add_argument("files", nargs="+", help="interactions.json files")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=float)
    p.add_argument("--min-support", dest="min_support", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)

    p = sub.add_parser("generate", parents=g, help="generate interaction sequences from a model")
    p.add_argument("model", help="model.json")
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", dest="max_len", type=int, default=50)
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("synth", parents=g, help="render a synthetic log from a spec")
    p.add_argument("spec", help="spec JSON path or demo:<name>")
    return parser


def _pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise InvalidInputError("--workers must be >= 1")
        cfg.workers = args.workers
    if args.text_detector is not None:
        cfg.text_detector = args.text_detector
    return cfg


def _need_out(args) -> Path:
    if not args.out:
        raise InvalidInputError(f"{args.command} needs --out <dir>")
    return Path(args.out)


def _dispatch(args) -> int:
    cfg = _pipeline_config(args)
    if args.command == "detect":
        dets = run_detect(args.log, cfg, _need_out(args))
        print(f"detected {sum(len(d.elements) for d in dets)} elements on {len(dets)} sampled frames")
    elif args.command == "analyze":
        seq = run_analyze(args.log, cfg, _need_out(args))
        for tok in tracking.tokenize(seq):
            print(tok)
    elif args.command == "mine":
        overrides = {k: getattr(args, k) for k in ("n", "k", "min_support", "min_len", "max_len")
                     if getattr(args, k) is not None}
        cfg.mining = MiningConfig(**{**asdict(cfg.mining), **overrides})
        stats = run_mine(args.files, cfg, _need_out(args))
        print(json.dumps(stats, indent=1))
    elif args.command == "generate":
        if args.count < 1:
            raise InvalidInputError("--count must be >= 1")
        model = mining.load_model(args.model)
        rng = np.random.default_rng(args.seed)
        for _ in range(args.count):
            seed = int(rng.integers(0, 2**63 - 1)) if args.mode == "sample" else None
            print(" ".join(mining.generate(model, args.mode, seed, args.max_len)))
    elif args.command == "synth":
        out = run_synth(args.spec, _need_out(args))
        print(f"wrote {out}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (InvalidInputError, LoadError, ValidationError) as exc:
        print(f"vislog: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TextDetectionError as exc:
        print(f"vislog: text detection failed: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(exc.diagnostics, file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001 - last-resort boundary for the exit-code contract
        log.debug("pipeline failure", exc_info=True)
        print(f"vislog: pipeline failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
