"""Visual-log data model, on-disk format and change detection.

A log directory holds ``vislog.json`` (the manifest), one lossless image per
frame and an optional ``events.jsonl`` stream of input events. Frame pixels
are decoded on demand, so a long log never sits in memory as floats.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from vismine.errors import (
    DimensionMismatchError,
    InvalidInputError,
    ManifestError,
    MissingFileError,
    TimestampOrderError,
)
from vismine.imaging import Raster, gray

log = logging.getLogger(__name__)

MANIFEST_NAME = "vislog.json"
EVENTS_NAME = "events.jsonl"
DEFAULT_THETA = 0.01
DEFAULT_DELAY = 2
EVENT_KINDS = ("touch_down", "touch_up", "touch_move", "key")
LOSSLESS_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}
ANONYMIZE_FILL = 0.5


def read_image(path: str | Path) -> Raster:
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1", "LA"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Raster(arr)


def write_image(img: Raster, path: str | Path) -> None:
    arr = np.round(img.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L" if img.channels == 1 else "RGB").save(path, format="PNG", compress_level=6)


class Frame:
    """One captured screen. Either holds its raster or decodes it from ``path``."""

    __slots__ = ("index", "t_ms", "path", "_image")

    def __init__(self, index: int, t_ms: int, image: Raster | None = None, path: Path | None = None):
        if image is None and path is None:
            raise InvalidInputError("frame needs an image or a path")
        self.index = index
        self.t_ms = t_ms
        self.path = Path(path) if path is not None else None
        self._image = image

    @property
    def image(self) -> Raster:
        if self._image is not None:
            return self._image
        return read_image(self.path)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.index == other.index and self.t_ms == other.t_ms and self.image == other.image

    def __repr__(self):
        return f"Frame(index={self.index}, t_ms={self.t_ms}, path={self.path})"


@dataclass(frozen=True)
class InputEvent:
    t_ms: int
    kind: str
    x: int | None = None
    y: int | None = None
    key: str | None = None

    def to_json(self) -> dict:
        out = {"t_ms": self.t_ms, "kind": self.kind}
        if self.x is not None:
            out["x"] = self.x
            out["y"] = self.y
        if self.key is not None:
            out["key"] = self.key
        return out


@dataclass
class VisualLog:
    screen: tuple[int, int]
    frames: list[Frame]
    events: list[InputEvent] = field(default_factory=list)
    root: Path | None = field(default=None, compare=False)
    warnings: list[str] = field(default_factory=list, compare=False)
    has_events_stream: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.frames:
            raise InvalidInputError("a visual log needs at least one frame")

    @property
    def name(self) -> str:
        return self.root.name if self.root is not None else "log"

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True)
class MajorEvent:
    frame_index: int
    mse: float


def _parse_event(obj, lineno: int, screen: tuple[int, int], path: Path) -> InputEvent:
    where = f"{path}:{lineno}"
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: event must be an object")
    kind = obj.get("kind")
    if kind not in EVENT_KINDS:
        raise ManifestError(f"{where}: unknown event kind {kind!r}")
    t = obj.get("t_ms")
    if not isinstance(t, int) or isinstance(t, bool):
        raise ManifestError(f"{where}: t_ms must be an integer")
    if kind == "key":
        key = obj.get("key")
        if not isinstance(key, str):
            raise ManifestError(f"{where}: key event needs a string 'key'")
        return InputEvent(t, kind, key=key)
    x, y = obj.get("x"), obj.get("y")
    if not isinstance(x, int) or not isinstance(y, int):
        raise ManifestError(f"{where}: touch event needs integer x and y")
    if not (0 <= x < screen[0] and 0 <= y < screen[1]):
        raise ManifestError(f"{where}: touch ({x}, {y}) outside the {screen[0]}x{screen[1]} screen")
    return InputEvent(t, kind, x, y)


def load_events(path: Path, screen: tuple[int, int]) -> list[InputEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            events.append(_parse_event(obj, lineno, screen, path))
    events.sort(key=lambda e: e.t_ms)
    return events


def load_log(manifest_path: str | Path) -> VisualLog:
    """Load a visual log from its manifest (or from the directory holding it)."""
    path = Path(manifest_path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    root = path.parent
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    if "version" not in manifest:
        raise ManifestError(f"{path}: missing 'version'")
    if manifest["version"] != 1:
        raise ManifestError(f"{path}: unsupported version {manifest['version']!r}")
    try:
        screen = (int(manifest["screen"]["width"]), int(manifest["screen"]["height"]))
        entries = manifest["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: missing or malformed 'screen'/'frames'") from exc
    if not isinstance(entries, list) or not entries:
        raise ManifestError(f"{path}: 'frames' must be a non-empty list")

    warnings = []
    frames = []
    last_t = None
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "file" not in entry or "t_ms" not in entry:
            raise ManifestError(f"{path}: frame {i} needs 'file' and 't_ms'")
        t = entry["t_ms"]
        if not isinstance(t, int) or isinstance(t, bool):
            raise ManifestError(f"{path}: frame {i} ({entry['file']}) has non-integer t_ms")
        if last_t is not None and t < last_t:
            raise TimestampOrderError(
                f"{path}: frame {i} ({entry['file']}) at t_ms={t} precedes frame {i - 1} at t_ms={last_t}")
        last_t = t
        fpath = root / entry["file"]
        if not fpath.is_file():
            raise MissingFileError(f"frame {i}: file not found: {fpath}")
        with Image.open(fpath) as im:
            size = im.size
        if size != screen:
            raise DimensionMismatchError(
                f"frame {i} ({entry['file']}) is {size[0]}x{size[1]}, screen is {screen[0]}x{screen[1]}")
        if fpath.suffix.lower() not in LOSSLESS_SUFFIXES:
            msg = f"frame {i} ({entry['file']}) uses a lossy format"
            log.warning(msg)
            warnings.append(msg)
        frames.append(Frame(i, t, path=fpath))

    events = []
    has_stream = False
    if manifest.get("events_file"):
        epath = root / manifest["events_file"]
        if not epath.is_file():
            raise MissingFileError(f"events file not found: {epath}")
        events = load_events(epath, screen)
        has_stream = True
    return VisualLog(screen, frames, events, root=root, warnings=warnings, has_events_stream=has_stream)


def write_log(vlog: VisualLog, directory: str | Path, *, with_events: bool | None = None) -> Path:
    """Write frames as PNG plus manifest (and events if any); returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for frame in vlog.frames:
        name = f"f{frame.index:04d}.png"
        write_image(frame.image, directory / name)
        entries.append({"file": name, "t_ms": frame.t_ms})
    manifest = {
        "version": 1,
        "screen": {"width": vlog.screen[0], "height": vlog.screen[1]},
        "frames": entries,
    }
    if with_events is None:
        with_events = bool(vlog.events) or vlog.has_events_stream
    if with_events:
        manifest["events_file"] = EVENTS_NAME
        with open(directory / EVENTS_NAME, "w", encoding="utf-8") as fh:
            for ev in vlog.events:
                fh.write(json.dumps(ev.to_json()) + "\n")
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def frame_mse(a: Raster, b: Raster) -> float:
    if a.data.shape != b.data.shape:
        raise InvalidInputError(f"frame shapes differ: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    return float(np.mean(d * d))


def _pair_mse(args) -> float:
    a, b = args
    return frame_mse(gray(a.image), gray(b.image))


def mse_series(vlog: VisualLog, workers: int = 1) -> list[float]:
    """MSE of every consecutive gray frame pair; entry i compares frames i and i+1."""
    frames = vlog.frames
    if len(frames) < 2:
        return []
    if workers > 1 and all(f.path is not None for f in frames):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_pair_mse, zip(frames, frames[1:]), chunksize=8))
    out = []
    prev = gray(frames[0].image)
    for f in frames[1:]:
        cur = gray(f.image)
        out.append(frame_mse(prev, cur))
        prev = cur
    return out


def major_events_from_series(series: Sequence[float], theta: float) -> list[MajorEvent]:
    return [MajorEvent(i + 1, m) for i, m in enumerate(series) if m > theta]


def detect_major_events(vlog: VisualLog, theta: float = DEFAULT_THETA, workers: int = 1) -> list[MajorEvent]:
    if not (0 < theta < 1):
        raise InvalidInputError(f"theta must be in (0, 1), got {theta}")
    return major_events_from_series(mse_series(vlog, workers), theta)


def sample_frames(vlog: VisualLog, events: Iterable[MajorEvent], delay: int = DEFAULT_DELAY) -> list[Frame]:
    if delay < 0:
        raise InvalidInputError(f"delay must be >= 0, got {delay}")
    last = len(vlog.frames) - 1
    picked = [0]
    for ev in sorted(events, key=lambda e: e.frame_index):
        idx = min(ev.frame_index + delay, last)
        if idx > picked[-1]:
            picked.append(idx)
    return [vlog.frames[i] for i in picked]


def anonymize(frame: Raster, regions: Iterable[Sequence[int]]) -> Raster:
    """Paint every region (x, y, w, h) flat mid-gray; other pixels are untouched."""
    data = frame.data.copy()
    for region in regions:
        x, y, w, h = (int(v) for v in region)
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > frame.width or y + h > frame.height:
            raise InvalidInputError(f"region {tuple(region)} outside the {frame.width}x{frame.height} frame")
        data[y:y + h, x:x + w] = ANONYMIZE_FILL
    return Raster(data)
