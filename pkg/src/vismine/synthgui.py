"""Deterministic synthetic GUI screens and scripted visual logs with ground truth.

Screens are flat backgrounds carrying filled rectangles, discs and plus
signs (icons), striped blocks standing in for text, and filled boxes
(combs) that hold other elements. Every rendered element is listed in the
annotation; scripted logs add the input events, the expected interaction
tokens and the frames where the screen switched.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from vismine.errors import ValidationError
from vismine.imaging import Raster
from vismine.vislog import EVENTS_NAME, MANIFEST_NAME, write_image

SCREEN_SIZES = ((1136, 640), (1334, 750), (1920, 1080))
TRUTH_NAME = "truth.json"
MIN_REL_SIZE = 0.0001
MAX_REL_SIZE = 0.05
HIGHLIGHT = 0.4
PLACEMENTS = ("below", "right", "left", "above")


@dataclass
class CaptionSpec:
    text: str
    placement: str = "below"
    gap: int = 8
    size: tuple[int, int] | None = None


@dataclass
class ElementSpec:
    name: str
    etype: str
    bbox: tuple[int, int, int, int]
    shape: str = "rectangle"
    level: float = 0.2
    label: str | None = None
    caption: CaptionSpec | None = None
    children: list["ElementSpec"] = field(default_factory=list)
    row: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ElementSpec":
        try:
            cap = d.get("caption")
            if cap is not None:
                cap = CaptionSpec(cap["text"], cap.get("placement", "below"), int(cap.get("gap", 8)),
                                  tuple(cap["size"]) if cap.get("size") else None)
            default_level = {"comb": 0.6, "text": 0.15}.get(d["type"], 0.2)
            return cls(
                name=str(d["name"]),
                etype=d["type"],
                bbox=tuple(int(v) for v in d["bbox"]),
                shape=d.get("shape", "rectangle"),
                level=float(d.get("level", default_level)),
                label=d.get("label"),
                caption=cap,
                children=[cls.from_dict(c) for c in d.get("children", [])],
                row=d.get("row"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed element spec {d!r}: {exc}") from exc

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "type": self.etype, "bbox": list(self.bbox),
                             "shape": self.shape, "level": self.level}
        if self.label is not None:
            d["label"] = self.label
        if self.caption is not None:
            c = {"text": self.caption.text, "placement": self.caption.placement, "gap": self.caption.gap}
            if self.caption.size:
                c["size"] = list(self.caption.size)
            d["caption"] = c
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        if self.row is not None:
            d["row"] = self.row
        return d


@dataclass
class ScreenSpec:
    width: int
    height: int
    elements: list[ElementSpec]
    seed: int = 0
    background: float = 0.95

    @classmethod
    def from_dict(cls, d: dict, width: int, height: int, seed: int = 0) -> "ScreenSpec":
        return cls(width, height, [ElementSpec.from_dict(e) for e in d.get("elements", [])],
                   int(d.get("seed", seed)), float(d.get("background", 0.95)))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "background": self.background,
                "elements": [e.to_dict() for e in self.elements]}


@dataclass
class _Placed:
    name: str
    etype: str
    bbox: tuple[int, int, int, int]
    shape: str
    level: float
    label: str | None
    parent: str | None
    owner: str | None = None      # for captions: the element they describe
    placement: str | None = None
    row: str | None = None


def text_size(text: str, screen_height: int) -> tuple[int, int]:
    h = max(8, round(0.019 * screen_height))
    cw = max(5, round(0.6 * h))
    return max(cw * len(text), cw), h


def _caption_bbox(owner: tuple[int, int, int, int], cap: CaptionSpec, screen_h: int):
    w, h = cap.size or text_size(cap.text, screen_h)
    x, y, ow, oh = owner
    cx, cy = x + ow // 2, y + oh // 2
    if cap.placement == "below":
        return cx - w // 2, y + oh + cap.gap, w, h
    if cap.placement == "above":
        return cx - w // 2, y - cap.gap - h, w, h
    if cap.placement == "right":
        return x + ow + cap.gap, cy - h // 2, w, h
    if cap.placement == "left":
        return x - cap.gap - w, cy - h // 2, w, h
    raise ValidationError(f"unknown caption placement {cap.placement!r}")


def _flatten(spec: ScreenSpec) -> list[_Placed]:
    out: list[_Placed] = []

    def visit(e: ElementSpec, parent: str | None, row: str | None):
        if e.etype not in ("icon", "text", "comb"):
            raise ValidationError(f"element {e.name!r}: unknown type {e.etype!r}")
        allowed = {"icon": ("rectangle", "circle", "irregular"), "comb": ("rectangle", "circle"),
                   "text": ("rectangle",)}[e.etype]
        if e.shape not in allowed:
            raise ValidationError(f"element {e.name!r}: shape {e.shape!r} not allowed for {e.etype}")
        row = e.row or row
        label = e.label if e.etype == "text" else None
        if e.etype == "text" and not label:
            raise ValidationError(f"text element {e.name!r} needs a label")
        out.append(_Placed(e.name, e.etype, e.bbox, e.shape, e.level, label, parent, row=row))
        if e.caption is not None:
            if e.caption.placement not in PLACEMENTS:
                raise ValidationError(f"element {e.name!r}: unknown caption placement {e.caption.placement!r}")
            cb = _caption_bbox(e.bbox, e.caption, spec.height)
            out.append(_Placed(f"{e.name}.caption", "text", cb, "rectangle", 0.15, e.caption.text, parent,
                               owner=e.name, placement=e.caption.placement, row=row))
        for c in e.children:
            if e.etype != "comb":
                raise ValidationError(f"element {e.name!r}: only combs may have children")
            visit(c, e.name, row)

    for e in spec.elements:
        visit(e, None, None)
    return out


def _iou(a, b) -> float:
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _contains(outer, inner) -> bool:
    return (outer[0] <= inner[0] and outer[1] <= inner[1]
            and inner[0] + inner[2] <= outer[0] + outer[2] and inner[1] + inner[3] <= outer[1] + outer[3])


def validate_screen(spec: ScreenSpec, placed: list[_Placed] | None = None) -> list[_Placed]:
    if (spec.width, spec.height) not in SCREEN_SIZES:
        raise ValidationError(f"screen {spec.width}x{spec.height} is not one of {SCREEN_SIZES}")
    placed = placed if placed is not None else _flatten(spec)
    area = spec.width * spec.height
    names = set()
    by_name = {}
    for p in placed:
        if p.name in names:
            raise ValidationError(f"duplicate element name {p.name!r}")
        names.add(p.name)
        by_name[p.name] = p
        x, y, w, h = p.bbox
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > spec.width or y + h > spec.height:
            raise ValidationError(f"element {p.name!r} bbox {p.bbox} outside the {spec.width}x{spec.height} screen")
        rel = w * h / area
        if not (MIN_REL_SIZE <= rel <= MAX_REL_SIZE):
            raise ValidationError(f"element {p.name!r} relative size {rel:.5f} outside [{MIN_REL_SIZE}, {MAX_REL_SIZE}]")
        if not (0.0 <= p.level <= 1.0):
            raise ValidationError(f"element {p.name!r} level {p.level} outside [0, 1]")
    for p in placed:
        if p.parent is not None and not _contains(by_name[p.parent].bbox, p.bbox):
            raise ValidationError(f"element {p.name!r} is not inside its parent {p.parent!r}")

    def ancestors(p):
        seen = set()
        while p.parent is not None:
            seen.add(p.parent)
            p = by_name[p.parent]
        return seen

    anc = {p.name: ancestors(p) for p in placed}
    for i, a in enumerate(placed):
        for b in placed[i + 1:]:
            if a.name in anc[b.name] or b.name in anc[a.name]:
                continue
            if _iou(a.bbox, b.bbox) > 0:
                raise ValidationError(f"elements {a.name!r} and {b.name!r} overlap")
    return placed


def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def _draw(canvas: np.ndarray, p: _Placed, bbox, seed: int) -> None:
    x, y, w, h = bbox
    if p.etype == "text":
        # one bar per glyph cell, random ascender height, 2px stroke gaps
        rng = _rng_for(seed, p.name + "|" + (p.label or ""))
        n = max(1, len(p.label or " "))
        cw = w / n
        for i in range(n):
            x0 = x + int(round(i * cw)) + 1
            x1 = x + int(round((i + 1) * cw)) - 1
            if x1 - x0 < 1:
                continue
            top = y + int(rng.integers(0, max(1, h // 3)))
            canvas[top:y + h, x0:x1] = p.level
        # a frame around the glyphs keeps the bbox exact
        canvas[y + h - 1, x:x + w] = p.level
        canvas[y:y + h, x] = p.level
        canvas[y:y + h, x + w - 1] = p.level
        canvas[y, x:x + w] = p.level
        return
    if p.shape == "rectangle":
        canvas[y:y + h, x:x + w] = p.level
    elif p.shape == "circle":
        yy, xx = np.mgrid[y:y + h, x:x + w]
        cx, cy = x + w / 2.0, y + h / 2.0
        inside = ((xx + 0.5 - cx) / (w / 2.0)) ** 2 + ((yy + 0.5 - cy) / (h / 2.0)) ** 2 <= 1.0
        canvas[y:y + h, x:x + w][inside] = p.level
    else:
        # plus sign: two bars of a third of the box each
        tx0, tx1 = x + w // 3, x + w - w // 3
        ty0, ty1 = y + h // 3, y + h - h // 3
        canvas[ty0:ty1, x:x + w] = p.level
        canvas[y:y + h, tx0:tx1] = p.level


def _reading_order(placed: list[_Placed], boxes: dict[str, tuple]) -> list[_Placed]:
    return sorted(placed, key=lambda p: (boxes[p.name][1], boxes[p.name][0], boxes[p.name][3],
                                         boxes[p.name][2], p.etype))


def element_label(name: str, placed: list[_Placed], ids: dict[str, int]) -> str | None:
    """Name the interaction target the way a reader of the screen would: its
    own text, a caption below/right of it, or (for a comb) the first text
    inside it."""
    by_name = {p.name: p for p in placed}
    p = by_name[name]
    if p.etype == "text":
        return p.label
    caps = [c for c in placed if c.owner == name and c.placement in ("below", "right")]
    if caps:
        return caps[0].label
    if p.etype == "comb":
        kids = sorted((c for c in placed if c.parent == name and c.etype == "text"), key=lambda c: ids[c.name])
        if kids:
            return kids[0].label
    return None


def target_label(name: str, placed: list[_Placed], ids: dict[str, int]) -> str:
    by_name = {p.name: p for p in placed}
    label = element_label(name, placed, ids)
    if label is None and by_name[name].parent is not None:
        label = element_label(by_name[name].parent, placed, ids)
    return label if label is not None else f"#{ids[name]}"


@dataclass
class Rendered:
    image: Raster
    annotation: dict
    placed: list[_Placed]
    boxes: dict[str, tuple[int, int, int, int]]
    ids: dict[str, int]


def _render(spec: ScreenSpec, placed: list[_Placed], *, offsets: dict[str, tuple[int, int]] | None = None,
            highlight: str | None = None, hidden: frozenset = frozenset()) -> Rendered:
    offsets = offsets or {}
    boxes = {}
    for p in placed:
        dx, dy = offsets.get(p.name, (0, 0))
        if p.row is not None:
            rdx, rdy = offsets.get("row:" + p.row, (0, 0))
            dx, dy = dx + rdx, dy + rdy
        x, y, w, h = p.bbox
        boxes[p.name] = (x + dx, y + dy, w, h)

    visible = [p for p in placed if p.name not in hidden]
    canvas = np.full((spec.height, spec.width), spec.background, dtype=np.float64)
    depth = {}
    for p in placed:
        d, q = 0, p
        while q.parent is not None:
            d += 1
            q = next(r for r in placed if r.name == q.parent)
        depth[p.name] = d
    for p in sorted(visible, key=lambda p: depth[p.name]):
        _draw(canvas, p, boxes[p.name], spec.seed)
    if highlight is not None:
        x, y, w, h = boxes[highlight]
        region = canvas[y:y + h, x:x + w]
        canvas[y:y + h, x:x + w] = region + HIGHLIGHT * (1.0 - region)
    # quantize exactly as a PNG round trip would
    canvas = np.round(canvas * 255.0) / 255.0

    ordered = _reading_order(visible, boxes)
    ids = {p.name: i for i, p in enumerate(ordered)}
    area = spec.width * spec.height
    elements = []
    for p in ordered:
        b = boxes[p.name]
        e = {"id": ids[p.name], "type": p.etype, "bbox": list(b), "shape": p.shape,
             "orientation": "horizontal", "rel_size": round(b[2] * b[3] / area, 8)}
        if p.etype == "text":
            e["label"] = p.label
        e["children"] = sorted(ids[c.name] for c in visible if c.parent == p.name)
        e["name"] = p.name
        elements.append(e)
    relations = []
    for p in visible:
        if p.owner is not None and p.owner in ids:
            relations.append({"source": ids[p.name], "target": ids[p.owner], "kind": p.placement})
        if p.parent is not None and p.parent in ids:
            relations.append({"source": ids[p.name], "target": ids[p.parent], "kind": "inside"})
    relations.sort(key=lambda r: (r["source"], r["target"], r["kind"]))
    return Rendered(Raster(canvas), {"elements": elements, "relations": relations}, placed, boxes, ids)


def render_screen(spec: ScreenSpec) -> tuple[Raster, dict]:
    """Render one screen; the annotation lists every element with id, type,
    bbox, shape and relations (elements.json layout plus each element's
    spec ``name``)."""
    placed = validate_screen(spec)
    r = _render(spec, placed)
    return r.image, r.annotation


# --------------------------------------------------------------------------
# scripted logs

@dataclass
class Step:
    action: str
    target: str | None = None
    goto: str | None = None
    row: str | None = None
    direction: str | None = None
    distance: int = 0
    frames: int = 2
    delta: int = 0
    hold: int | None = None     # overrides the script's hold_frames for this step

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        known = {"action", "target", "goto", "row", "direction", "distance", "frames", "delta", "hold"}
        if set(d) - known:
            raise ValidationError(f"unknown step keys {sorted(set(d) - known)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"action": self.action}
        for k in ("target", "goto", "row", "direction"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.action == "swipe":
            d["distance"] = self.distance
            d["frames"] = self.frames
        if self.action == "adjust":
            d["delta"] = self.delta
        if self.hold is not None:
            d["hold"] = self.hold
        return d


@dataclass
class ScriptSpec:
    width: int
    height: int
    screens: dict[str, ScreenSpec]
    start: str
    steps: list[Step]
    frame_interval_ms: int = 100
    hold_frames: int = 2
    events: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ScriptSpec":
        try:
            w, h = int(d["screen"]["width"]), int(d["screen"]["height"])
            seed = int(d.get("seed", 0))
            screens = {name: ScreenSpec.from_dict(s, w, h, seed) for name, s in d["screens"].items()}
            spec = cls(w, h, screens, d["start"], [Step.from_dict(s) for s in d.get("script", [])],
                       int(d.get("frame_interval_ms", 100)), int(d.get("hold_frames", 2)),
                       bool(d.get("events", True)), seed)
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"malformed script spec: {exc}") from exc
        return spec

    def to_dict(self) -> dict:
        return {"version": 1, "screen": {"width": self.width, "height": self.height}, "seed": self.seed,
                "frame_interval_ms": self.frame_interval_ms, "hold_frames": self.hold_frames,
                "events": self.events, "start": self.start,
                "screens": {k: v.to_dict() for k, v in self.screens.items()},
                "script": [s.to_dict() for s in self.steps]}


@dataclass
class SyntheticLog:
    frames: list[Raster]
    times: list[int]
    events: list[dict]
    truth_frames: list[dict]
    tokens: list[str]
    major_events: list[int]
    screen: tuple[int, int]

    def truth(self) -> dict:
        return {"frames": self.truth_frames, "tokens": self.tokens, "major_events": self.major_events}


def _normalize_token_label(label: str) -> str:
    return "_".join(label.lower().split())


def build_log(script: ScriptSpec) -> SyntheticLog:
    """Play a script into frames, events and ground truth (in memory)."""
    if script.start not in script.screens:
        raise ValidationError(f"start screen {script.start!r} not defined")
    if script.hold_frames < 1:
        raise ValidationError("hold_frames must be >= 1")
    placed_by_screen = {}
    for name, s in script.screens.items():
        if (s.width, s.height) != (script.width, script.height):
            raise ValidationError(f"screen {name!r} size differs from the log screen")
        try:
            placed_by_screen[name] = validate_screen(s)
        except ValidationError as exc:
            raise ValidationError(f"screen {name!r}: {exc}") from exc

    dt = script.frame_interval_ms
    frames: list[Raster] = []
    truth_frames: list[dict] = []
    events: list[dict] = []
    tokens: list[str] = []
    majors: list[int] = []
    cache: dict = {}

    state = {"screen": script.start, "offsets": {}}

    def render(highlight=None, hidden=frozenset()):
        key = (state["screen"], tuple(sorted(state["offsets"].items())), highlight, hidden)
        if key not in cache:
            spec = script.screens[state["screen"]]
            placed = placed_by_screen[state["screen"]]
            r = _render(spec, placed, offsets=state["offsets"], highlight=highlight, hidden=hidden)
            for nm, b in r.boxes.items():
                x, y, w, h = b
                if x < 0 or y < 0 or x + w > script.width or y + h > script.height:
                    raise ValidationError(f"element {nm!r} leaves the screen")
            cache[key] = r
        return cache[key]

    def emit(r: Rendered):
        i = len(frames)
        frames.append(r.image)
        truth_frames.append({"frame": i, **r.annotation})
        return i

    def t_of(i):
        return i * dt

    def event(t, kind, x, y):
        if script.events:
            events.append({"t_ms": t, "kind": kind, "x": int(x), "y": int(y)})

    def hold(r, n):
        for _ in range(n):
            emit(r)

    # with nothing to play there is nothing to hold for
    hold(render(), script.hold_frames if script.steps else 1)

    for k, step in enumerate(script.steps):
        where = f"step {k} ({step.action})"
        h = script.hold_frames if step.hold is None else step.hold
        if h < 1:
            raise ValidationError(f"{where}: hold must be >= 1")
        placed = placed_by_screen[state["screen"]]
        names = {p.name for p in placed}
        if step.action in ("click", "adjust", "blink") and step.target not in names:
            raise ValidationError(f"{where}: target {step.target!r} not on screen {state['screen']!r}")
        if step.goto is not None and step.goto not in script.screens:
            raise ValidationError(f"{where}: unknown screen {step.goto!r}")

        if step.action == "click":
            r = render()
            bx, by, bw, bh = r.boxes[step.target]
            tx, ty = bx + bw // 2, by + bh // 2
            hit = [p for p in r.placed if _contains(r.boxes[p.name], (tx, ty, 1, 1))]
            innermost = min(hit, key=lambda p: (r.boxes[p.name][2] * r.boxes[p.name][3], r.ids[p.name]))
            tokens.append("click:" + _normalize_token_label(target_label(innermost.name, r.placed, r.ids)))
            i = emit(render(highlight=step.target))
            event(t_of(i) - dt // 2, "touch_down", tx, ty)
            event(t_of(i) + dt // 3, "touch_up", tx, ty)
            if step.goto is not None:
                state["screen"], state["offsets"] = step.goto, {}
                j = emit(render())
                majors.append(j)
                hold(render(), h - 1)
            else:
                hold(render(), h)
        elif step.action == "swipe":
            rows = {p.row for p in placed if p.row}
            if step.row not in rows:
                raise ValidationError(f"{where}: row {step.row!r} not on screen {state['screen']!r}")
            if step.direction not in ("left", "right", "up", "down") or step.frames < 2 or step.distance <= 0:
                raise ValidationError(f"{where}: needs a direction, distance > 0 and frames >= 2")
            r = render()
            first = min((p for p in placed if p.row == step.row), key=lambda p: r.ids[p.name])
            bx, by, bw, bh = r.boxes[first.name]
            px, py = bx + bw // 2, by + bh // 2
            sx, sy = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}[step.direction]
            key = "row:" + step.row
            ox, oy = state["offsets"].get(key, (0, 0))
            per = [step.distance * (f + 1) // step.frames - step.distance * f // step.frames
                   for f in range(step.frames)]
            tokens.append("swipe:" + step.direction)
            i = len(frames)
            event(t_of(i) - 6 * dt // 10, "touch_down", px, py)
            moved = 0
            for f, d in enumerate(per):
                moved += d
                state["offsets"] = {**state["offsets"], key: (ox + sx * moved, oy + sy * moved)}
                i = emit(render())
                event(t_of(i) - dt // 10, "touch_move",
                      min(max(px + sx * moved, 0), script.width - 1), min(max(py + sy * moved, 0), script.height - 1))
            event(t_of(i) + dt // 5, "touch_up",
                  min(max(px + sx * moved, 0), script.width - 1), min(max(py + sy * moved, 0), script.height - 1))
            hold(render(), h - 1)
        elif step.action == "adjust":
            r = render()
            p = next(q for q in placed if q.name == step.target)
            if p.parent is None or next(q for q in placed if q.name == p.parent).etype != "comb":
                raise ValidationError(f"{where}: adjust target must sit inside a comb")
            if step.delta == 0:
                raise ValidationError(f"{where}: adjust needs a non-zero delta")
            bx, by, bw, bh = r.boxes[step.target]
            px, py = bx + bw // 2, by + bh // 2
            tokens.append(f"adjust:{_normalize_token_label(target_label(step.target, r.placed, r.ids))}:"
                          + ("+" if step.delta > 0 else "-"))
            ox, oy = state["offsets"].get(step.target, (0, 0))
            state["offsets"] = {**state["offsets"], step.target: (ox + step.delta, oy)}
            r2 = render()
            if not _contains(r2.boxes[p.parent], r2.boxes[step.target]):
                raise ValidationError(f"{where}: adjust moves {step.target!r} out of its comb")
            i = emit(r2)
            event(t_of(i) - 6 * dt // 10, "touch_down", px, py)
            event(t_of(i) - dt // 10, "touch_move", px + step.delta, py)
            event(t_of(i) + dt // 5, "touch_up", px + step.delta, py)
            hold(r2, h - 1)
        elif step.action == "transition":
            if step.goto is None:
                raise ValidationError(f"{where}: transition needs 'goto'")
            tokens.append("transition")
            state["screen"], state["offsets"] = step.goto, {}
            j = emit(render())
            majors.append(j)
            hold(render(), h - 1)
        elif step.action == "blink":
            # automatic animation: the target vanishes for one frame, no input
            emit(render(hidden=frozenset([step.target])))
            hold(render(), h)
        else:
            raise ValidationError(f"{where}: unknown action {step.action!r}")

    return SyntheticLog(frames, [t_of(i) for i in range(len(frames))], events, truth_frames,
                        tokens, majors, (script.width, script.height))


def write_synthetic_log(slog: SyntheticLog, out_dir: str | Path, with_events: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, t) in enumerate(zip(slog.frames, slog.times)):
        name = f"f{i:04d}.png"
        write_image(img, out / name)
        entries.append({"file": name, "t_ms": t})
    manifest = {"version": 1, "screen": {"width": slog.screen[0], "height": slog.screen[1]}, "frames": entries}
    if with_events:
        manifest["events_file"] = EVENTS_NAME
        with open(out / EVENTS_NAME, "w", encoding="utf-8") as fh:
            for ev in sorted(slog.events, key=lambda e: e["t_ms"]):
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    elif (out / EVENTS_NAME).exists():
        (out / EVENTS_NAME).unlink()
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    (out / TRUTH_NAME).write_text(json.dumps(slog.truth(), separators=(",", ":"), sort_keys=True) + "\n",
                                  encoding="utf-8")
    return out


def render_log(script: ScriptSpec, out_dir: str | Path) -> Path:
    """Render a scripted log directory: manifest, frames, events.jsonl, truth.json."""
    slog = build_log(script)
    return write_synthetic_log(slog, out_dir, with_events=script.events)


# --------------------------------------------------------------------------
# random screens and scripts

_WORDS = ("Save", "Edit", "Share", "Crop", "Filter", "Album", "Camera", "Photos", "Settings", "Beauty",
          "Collage", "Rotate", "Sharpen", "Undo", "Redo", "Home", "Back", "Next", "Gallery", "Text",
          "Brush", "Frame", "Sticker", "Mosaic", "Vivid", "Mono", "Warm", "Cool", "Detail", "Light")


def _word(rng) -> str:
    return str(rng.choice(_WORDS))


def random_screen(width: int, height: int, n_elements: int, seed: int, prefix: str = "") -> ScreenSpec:
    """Grid layout of units (icon, captioned icon, text, comb) with ``n_elements`` elements in total."""
    rng = np.random.default_rng(seed)
    cols, rows = 5, 4
    cw, ch = width // cols, height // rows
    pad_x, pad_y = int(cw * 0.12), int(ch * 0.12)
    scale = ((width * height) / (1136 * 640)) ** 0.5
    cells = [(c, r) for r in range(rows) for c in range(cols)]
    order = rng.permutation(len(cells))
    elements: list[ElementSpec] = []
    count = 0
    k = 0
    _, text_h = text_size("x", height)
    gap = max(6, round(6 * scale))

    def icon_side():
        return int(round(rng.uniform(34, 50) * scale))

    def icon_shape():
        return str(rng.choice(["rectangle", "circle", "irregular"], p=[0.45, 0.35, 0.2]))

    while count < n_elements and k < len(order):
        c, r = cells[order[k]]
        k += 1
        x0, y0 = c * cw + pad_x, r * ch + pad_y
        aw, ah = cw - 2 * pad_x, ch - 2 * pad_y
        left = n_elements - count
        kinds = ["icon", "text"]
        if left >= 2:
            kinds += ["icon_below", "icon_right", "disc_comb"]
        if left >= 3:
            kinds += ["comb"]
        kind = str(rng.choice(kinds))
        name = f"{prefix}u{k}"
        level = float(rng.uniform(0.1, 0.3))
        if kind == "icon":
            s = icon_side()
            elements.append(ElementSpec(name, "icon", (x0 + (aw - s) // 2, y0 + (ah - s) // 2, s, s),
                                        icon_shape(), level))
            count += 1
        elif kind == "text":
            word = _word(rng)
            tw, th = text_size(word, height)
            elements.append(ElementSpec(name, "text", (x0 + (aw - tw) // 2, y0 + (ah - th) // 2, tw, th),
                                        label=word, level=0.15))
            count += 1
        elif kind == "icon_below":
            s = icon_side()
            word = _word(rng)
            tw, th = text_size(word, height)
            top = y0 + (ah - (s + gap + th)) // 2
            elements.append(ElementSpec(name, "icon", (x0 + (aw - s) // 2, top, s, s), icon_shape(), level,
                                        caption=CaptionSpec(word, "below", gap)))
            count += 2
        elif kind == "icon_right":
            s = icon_side()
            word = _word(rng)
            tw, th = text_size(word, height)
            lx = x0 + (aw - (s + gap + tw)) // 2
            elements.append(ElementSpec(name, "icon", (lx, y0 + (ah - s) // 2, s, s), icon_shape(), level,
                                        caption=CaptionSpec(word, "right", gap)))
            count += 2
        elif kind == "disc_comb":
            d = int(min(aw, ah) * rng.uniform(0.85, 1.0))
            bx, by = x0 + (aw - d) // 2, y0 + (ah - d) // 2
            s = int(d * 0.36)
            child = ElementSpec(name + ".icon", "icon", (bx + (d - s) // 2, by + (d - s) // 2, s, s),
                                str(rng.choice(["rectangle", "irregular"])), float(rng.uniform(0.05, 0.2)))
            elements.append(ElementSpec(name, "comb", (bx, by, d, d), "circle", float(rng.uniform(0.55, 0.65)),
                                        children=[child]))
            count += 2
        else:
            w = int(aw * rng.uniform(0.8, 1.0))
            h = int(ah * rng.uniform(0.85, 1.0))
            bx, by = x0 + (aw - w) // 2, y0 + (ah - h) // 2
            s = int(min(h * 0.42, w * 0.42))
            word = _word(rng)
            tw, th = text_size(word, height)
            top = by + (h - (s + gap + th)) // 2
            child = ElementSpec(name + ".icon", "icon", (bx + (w - s) // 2, top, s, s),
                                str(rng.choice(["rectangle", "circle"])), float(rng.uniform(0.05, 0.2)),
                                caption=CaptionSpec(word, "below", gap))
            elements.append(ElementSpec(name, "comb", (bx, by, w, h), "rectangle", float(rng.uniform(0.55, 0.65)),
                                        children=[child]))
            count += 3
    return ScreenSpec(width, height, elements, seed)


def load_script(path: str | Path) -> ScriptSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read spec {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"spec {path} must be a JSON object")
    return ScriptSpec.from_dict(data)


DEMO_DIR = Path(__file__).with_name("data")


def demo_path(name: str) -> Path:
    return DEMO_DIR / f"{name}.json"


def _switch_mse(a: ScreenSpec, b: ScreenSpec) -> float:
    ia, _ = render_screen(a)
    ib, _ = render_screen(b)
    return float(np.mean((ia.data - ib.data) ** 2))


def _distinct_screens(width: int, height: int, count: int, seed: int, min_mse: float) -> list[ScreenSpec]:
    """Random screens where every consecutive pair differs by more than ``min_mse``."""
    rng = np.random.default_rng(seed)
    out: list[ScreenSpec] = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 50 * count:
            raise ValidationError("could not find sufficiently distinct screens")
        s = int(rng.integers(0, 2**31 - 1))
        cand = random_screen(width, height, int(rng.integers(8, 21)), s, prefix=f"s{len(out)}")
        if out and _switch_mse(out[-1], cand) <= min_mse:
            continue
        out.append(cand)
    return out


def _clickable(spec: ScreenSpec) -> list[str]:
    return [p.name for p in _flatten(spec) if p.etype == "icon"]


def transitions_script(width: int = 1136, height: int = 640, transitions: int = 9, hold: int = 6,
                       seed: int = 7, blinks: bool = True) -> ScriptSpec:
    """A log that switches screens ``transitions`` times with no input, holding
    each screen ``hold`` frames; optional one-frame icon blinks stand in for
    automatic animation."""
    screens = _distinct_screens(width, height, transitions + 1, seed, min_mse=0.02)
    names = [f"screen{i}" for i in range(len(screens))]
    rng = np.random.default_rng(seed + 1)
    steps: list[Step] = []
    for i, name in enumerate(names[1:]):
        # a blink shares the screen's hold: transition frame + 2, blink frame + the rest,
        # so the frame sampled two after the switch is still the settled screen
        if blinks and hold >= 5 and i % 3 == 1:
            steps.append(Step("transition", goto=name, hold=3))
            icons = _clickable(screens[i + 1])
            steps.append(Step("blink", target=str(rng.choice(icons)), hold=hold - 4))
        else:
            steps.append(Step("transition", goto=name))
    script = ScriptSpec(width, height, dict(zip(names, screens)), names[0], steps,
                        hold_frames=hold, events=True, seed=seed)
    return script


def long_script(width: int = 1334, height: int = 750, frames: int = 200, hold: int = 8,
                seed: int = 11) -> ScriptSpec:
    """Random clicks and transitions over random screens until about ``frames`` frames."""
    screens = _distinct_screens(width, height, 6, seed, min_mse=0.02)
    names = [f"screen{i}" for i in range(len(screens))]
    rng = np.random.default_rng(seed + 1)
    steps: list[Step] = []
    cur = 0
    used = hold
    while used + hold + 1 <= frames:
        nxt = (cur + 1 + int(rng.integers(0, len(names) - 1))) % len(names)
        if rng.random() < 0.75:
            icons = _clickable(screens[cur])
            steps.append(Step("click", target=str(rng.choice(icons)), goto=names[nxt]))
            used += hold + 1
        else:
            steps.append(Step("transition", goto=names[nxt]))
            used += hold
        cur = nxt
    if steps and used < frames:
        # the last screen absorbs the remainder so the log has exactly ``frames`` frames
        steps[-1].hold = hold + frames - used
    return ScriptSpec(width, height, dict(zip(names, screens)), names[0], steps,
                      hold_frames=hold, events=True, seed=seed)
