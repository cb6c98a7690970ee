"""Element tracking across frames and interaction inference.

Each step between two consecutive, non-identical frames is explained by at
most one rule, tried in priority order: click (touch on an element that
changes appearance), swipe (a group of elements translating together),
adjust (a small knob sliding inside a fixed comb) and finally transition
(a major screen change nothing else accounts for). Changes without any
input are treated as automatic animation and dropped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from vismine.detection import BBox, FrameDetection, GuiElement
from vismine.errors import InvalidInputError
from vismine.imaging import Raster, gray
from vismine.vislog import InputEvent

log = logging.getLogger(__name__)

ACTIONS = ("click", "swipe", "adjust", "transition")
DIRECTIONS = ("left", "right", "up", "down")


@dataclass
class TrackingConfig:
    match_iou: float = 0.3
    match_radius: float = 0.1            # fraction of screen width
    size_tolerance: float = 0.3
    touch_margin: int = 5
    click_min_delta: float = 0.05
    unmoved_tolerance: int = 2
    swipe_quorum: int = 3
    swipe_tolerance: int = 3
    swipe_min_shift: float = 0.05        # fraction of screen width
    adjust_max_rel_size: float = 0.002
    adjust_min_shift: int = 10
    adjust_cross_tolerance: int = 3
    animation_window_ms: int = 200
    change_threshold: float = 0.02       # per-pixel gray change counted as "changed"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (0 < self.match_iou <= 1):
            raise InvalidInputError("match_iou must be in (0, 1]")
        for name in ("match_radius", "size_tolerance", "click_min_delta", "swipe_min_shift",
                     "adjust_max_rel_size", "change_threshold"):
            if not (0 < getattr(self, name) < 1):
                raise InvalidInputError(f"{name} must be in (0, 1)")
        for name in ("touch_margin", "unmoved_tolerance", "swipe_tolerance", "adjust_cross_tolerance",
                     "animation_window_ms"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise InvalidInputError(f"{name} must be a non-negative integer")
        if not isinstance(self.swipe_quorum, int) or self.swipe_quorum < 2:
            raise InvalidInputError("swipe_quorum must be an integer >= 2")
        if not isinstance(self.adjust_min_shift, int) or self.adjust_min_shift < 1:
            raise InvalidInputError("adjust_min_shift must be a positive integer")

    @classmethod
    def from_dict(cls, data: dict) -> "TrackingConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidInputError(f"unknown tracking config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ElementMatch:
    prev_id: int
    next_id: int
    displacement: tuple[int, int]
    appearance_delta: float


@dataclass
class MatchResult:
    matches: list[ElementMatch]
    appeared: list[int]
    disappeared: list[int]

    def by_prev(self) -> dict[int, ElementMatch]:
        return {m.prev_id: m for m in self.matches}


@dataclass
class InteractionEvent:
    t_ms: int
    action: str
    target_id: int | None = None
    target_label: str | None = None
    direction: str | None = None
    delta: int | None = None
    low_confidence: bool = False

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise InvalidInputError(f"unknown action {self.action!r}")
        if self.action in ("click", "adjust") and self.target_id is None:
            raise InvalidInputError(f"{self.action} needs a target")
        if self.action == "swipe" and self.direction not in DIRECTIONS:
            raise InvalidInputError("swipe needs a direction")

    def to_json(self) -> dict:
        out: dict = {"t_ms": self.t_ms, "action": self.action}
        if self.target_id is not None:
            out["target_id"] = self.target_id
        if self.target_label is not None:
            out["target_label"] = self.target_label
        if self.direction is not None:
            out["direction"] = self.direction
        if self.delta is not None:
            out["delta"] = self.delta
        if self.low_confidence:
            out["low_confidence"] = True
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "InteractionEvent":
        return cls(int(obj["t_ms"]), obj["action"], obj.get("target_id"), obj.get("target_label"),
                   obj.get("direction"), obj.get("delta"), bool(obj.get("low_confidence", False)))


@dataclass
class InteractionSequence:
    log_id: str
    events: list[InteractionEvent] = field(default_factory=list)

    def __post_init__(self):
        ts = [e.t_ms for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError("interaction events must be time ordered")

    def to_json(self) -> dict:
        return {"log": self.log_id, "events": [e.to_json() for e in self.events]}

    @classmethod
    def from_json(cls, obj: dict) -> "InteractionSequence":
        if not isinstance(obj, dict) or "events" not in obj:
            raise InvalidInputError("interactions file needs an 'events' list")
        return cls(str(obj.get("log", "")), [InteractionEvent.from_json(e) for e in obj["events"]])


# --------------------------------------------------------------------------
# matching

def _iou(a: BBox, b: BBox) -> float:
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def _center(b: BBox) -> tuple[float, float]:
    return b[0] + b[2] / 2.0, b[1] + b[3] / 2.0


def appearance_delta(prev_gray: np.ndarray, a: BBox, next_gray: np.ndarray, b: BBox) -> float:
    """Mean absolute gray difference of the two crops aligned at their top-left corners."""
    w, h = min(a[2], b[2]), min(a[3], b[3])
    if w <= 0 or h <= 0:
        return 0.0
    pa = prev_gray[a[1]:a[1] + h, a[0]:a[0] + w]
    pb = next_gray[b[1]:b[1] + h, b[0]:b[0] + w]
    return float(np.mean(np.abs(pa - pb)))


def _as_gray(frame: Raster | np.ndarray) -> np.ndarray:
    return gray(frame).data if isinstance(frame, Raster) else np.asarray(frame, dtype=np.float64)


def match_elements(prev: Sequence[GuiElement], prev_frame: Raster | np.ndarray,
                   nxt: Sequence[GuiElement], next_frame: Raster | np.ndarray,
                   cfg: TrackingConfig | None = None) -> MatchResult:
    """One-to-one matching: greedy by IoU, then same-type, similar-size elements
    within reach, preferring a displacement many elements share."""
    cfg = cfg or TrackingConfig()
    pg, ng = _as_gray(prev_frame), _as_gray(next_frame)
    screen_w = pg.shape[1]

    pb_all = {e.id: e for e in prev}
    nb_all = {e.id: e for e in nxt}
    pairs = []
    for p in prev:
        for n in nxt:
            v = _iou(p.bbox, n.bbox)
            if v >= cfg.match_iou:
                pairs.append((-v, p.id, n.id))
    pairs.sort()
    used_p, used_n, chosen = set(), set(), []
    for _, pi, ni in pairs:
        if pi in used_p or ni in used_n:
            continue
        used_p.add(pi)
        used_n.add(ni)
        chosen.append((pi, ni))

    radius = cfg.match_radius * screen_w
    near = []
    for p in prev:
        if p.id in used_p:
            continue
        pcx, pcy = _center(p.bbox)
        for n in nxt:
            if n.id in used_n or n.etype != p.etype:
                continue
            if abs(n.bbox[2] - p.bbox[2]) > cfg.size_tolerance * p.bbox[2]:
                continue
            if abs(n.bbox[3] - p.bbox[3]) > cfg.size_tolerance * p.bbox[3]:
                continue
            ncx, ncy = _center(n.bbox)
            d = ((ncx - pcx) ** 2 + (ncy - pcy) ** 2) ** 0.5
            if d <= radius:
                near.append((p.id, n.id, ncx - pcx, ncy - pcy, d))
    # elements of a scrolled row move together: when spacing is tight the
    # nearest center can be the neighbour, so a displacement shared by more
    # elements wins, then the better looking crop, then the shorter hop
    tol = cfg.swipe_tolerance
    ranked = []
    for pi, ni, dx, dy, d in near:
        support = len({q for q, _, ex, ey, _ in near if abs(ex - dx) <= tol and abs(ey - dy) <= tol})
        a, b = pb_all[pi].bbox, nb_all[ni].bbox
        ranked.append((-support, round(appearance_delta(pg, a, ng, b), 9), d, pi, ni))
    ranked.sort()
    for _, _, _, pi, ni in ranked:
        if pi in used_p or ni in used_n:
            continue
        used_p.add(pi)
        used_n.add(ni)
        chosen.append((pi, ni))

    matches = []
    for pi, ni in sorted(chosen):
        a, b = pb_all[pi].bbox, nb_all[ni].bbox
        matches.append(ElementMatch(pi, ni, (b[0] - a[0], b[1] - a[1]), appearance_delta(pg, a, ng, b)))
    return MatchResult(matches,
                       sorted(e.id for e in nxt if e.id not in used_n),
                       sorted(e.id for e in prev if e.id not in used_p))


# --------------------------------------------------------------------------
# labels

def _parents(det: FrameDetection) -> dict[int, int]:
    return {r.source: r.target for r in det.relations if r.kind == "inside"}


def _own_label(e: GuiElement, det: FrameDetection, by_id: dict[int, GuiElement]) -> str | None:
    if e.etype == "text":
        return e.label
    caps = sorted(r.source for r in det.relations if r.target == e.id and r.kind in ("below", "right"))
    for c in caps:
        if by_id[c].label:
            return by_id[c].label
    if e.etype == "comb":
        kids = sorted(r.source for r in det.relations if r.target == e.id and r.kind == "inside")
        for k in kids:
            if by_id[k].etype == "text" and by_id[k].label:
                return by_id[k].label
    return None


def element_label(det: FrameDetection, element_id: int) -> str:
    """Own text, else a caption below/right, else (comb) first inner text,
    else the parent comb's label, else ``#id``."""
    by_id = {e.id: e for e in det.elements}
    e = by_id[element_id]
    label = _own_label(e, det, by_id)
    if label is None:
        parent = _parents(det).get(element_id)
        if parent is not None:
            label = _own_label(by_id[parent], det, by_id)
    return label if label is not None else f"#{element_id}"


# --------------------------------------------------------------------------
# inference

def _contains_point(b: BBox, x: float, y: float, margin: int) -> bool:
    return b[0] - margin <= x < b[0] + b[2] + margin and b[1] - margin <= y < b[1] + b[3] + margin


def _unmoved(m: ElementMatch, cfg: TrackingConfig) -> bool:
    return max(abs(m.displacement[0]), abs(m.displacement[1])) <= cfg.unmoved_tolerance


def _innermost(elements: Sequence[GuiElement], x: float, y: float, margin: int) -> GuiElement | None:
    hit = [e for e in elements if _contains_point(e.bbox, x, y, margin)]
    if not hit:
        return None
    return min(hit, key=lambda e: (e.bbox[2] * e.bbox[3], e.id))


@dataclass
class StepData:
    """Everything the rules need about one step between frames i and i+1."""
    index: int                # frame index of the earlier frame
    t_prev: int
    t_next: int
    prev: FrameDetection
    nxt: FrameDetection
    match: MatchResult
    prev_gray: np.ndarray
    next_gray: np.ndarray
    major: bool


def _step_events(events: Sequence[InputEvent], lo: int, hi: int, kind: str) -> list[InputEvent]:
    return [e for e in events if e.kind == kind and lo < e.t_ms <= hi]


def _click_on(step: StepData, x: float, y: float, cfg: TrackingConfig) -> GuiElement | None:
    target = _innermost(step.prev.elements, x, y, cfg.touch_margin)
    if target is None:
        return None
    m = step.match.by_prev().get(target.id)
    if m is not None:
        if not _unmoved(m, cfg):
            return None
        delta = m.appearance_delta
    else:
        delta = appearance_delta(step.prev_gray, target.bbox, step.next_gray, target.bbox)
    return target if delta >= cfg.click_min_delta else None


def _swipe(step: StepData, cfg: TrackingConfig, screen_w: int) -> tuple[str, tuple[int, int]] | None:
    moving = [m for m in step.match.matches
              if max(abs(m.displacement[0]), abs(m.displacement[1])) >= cfg.swipe_min_shift * screen_w]
    best = None
    for m in moving:
        dx, dy = m.displacement
        group = [o for o in moving if abs(o.displacement[0] - dx) <= cfg.swipe_tolerance
                 and abs(o.displacement[1] - dy) <= cfg.swipe_tolerance]
        key = (len(group), -abs(dx) - abs(dy), m.prev_id)
        if len(group) >= cfg.swipe_quorum and (best is None or key[0] > best[0][0]):
            best = (key, m.displacement)
    if best is None:
        return None
    dx, dy = best[1]
    if abs(dx) >= abs(dy):
        return ("right" if dx > 0 else "left"), best[1]
    return ("down" if dy > 0 else "up"), best[1]


def _adjust(step: StepData, cfg: TrackingConfig) -> tuple[GuiElement, int] | None:
    by_prev = step.match.by_prev()
    parents = _parents(step.prev)
    by_id = {e.id: e for e in step.prev.elements}
    moved = [m for m in step.match.matches if not _unmoved(m, cfg)]
    found = []
    for m in moved:
        e = by_id[m.prev_id]
        if e.rel_size > cfg.adjust_max_rel_size:
            continue
        dx, dy = m.displacement
        if abs(dx) >= cfg.adjust_min_shift and abs(dy) <= cfg.adjust_cross_tolerance:
            shift = dx
        elif abs(dy) >= cfg.adjust_min_shift and abs(dx) <= cfg.adjust_cross_tolerance:
            shift = dy
        else:
            continue
        pid = parents.get(e.id)
        if pid is None or by_id[pid].etype != "comb":
            continue
        pm = by_prev.get(pid)
        if pm is None or not _unmoved(pm, cfg):
            continue
        found.append((e, shift))
    return found[0] if len(found) == 1 else None


def _changed_region(step: StepData, cfg: TrackingConfig) -> tuple[int, int, int, int] | None:
    diff = np.abs(step.next_gray - step.prev_gray) > cfg.change_threshold
    if not diff.any():
        return None
    ys = np.flatnonzero(diff.any(axis=1))
    xs = np.flatnonzero(diff.any(axis=0))
    return int(xs[0]), int(ys[0]), int(xs[-1] - xs[0] + 1), int(ys[-1] - ys[0] + 1)


def _degraded_click(step: StepData, cfg: TrackingConfig) -> GuiElement | None:
    """Without touches: a change confined to one element whose center lands on an element that changed."""
    region = _changed_region(step, cfg)
    if region is None:
        return None
    rx, ry, rw, rh = region
    m = cfg.touch_margin
    covering = [e for e in step.prev.elements
                if e.bbox[0] - m <= rx and e.bbox[1] - m <= ry
                and rx + rw <= e.bbox[0] + e.bbox[2] + m and ry + rh <= e.bbox[1] + e.bbox[3] + m]
    if not covering:
        return None
    cx, cy = rx + rw / 2.0, ry + rh / 2.0
    return _click_on(step, cx, cy, cfg)


def _clamp(t: int, lo: int, hi: int) -> int:
    return min(max(t, lo), hi)


def infer_interactions(steps: Sequence[StepData], events: Sequence[InputEvent], has_events: bool,
                       screen: tuple[int, int], cfg: TrackingConfig | None = None,
                       log_id: str = "log") -> InteractionSequence:
    """Fold the rules over pre-computed steps (in frame order)."""
    cfg = cfg or TrackingConfig()
    out: list[InteractionEvent] = []
    consumed: set[int] = set()
    last_click_step: int | None = None
    last_swipe: tuple[str, int] | None = None   # (direction, step index)
    candidate: tuple[StepData, GuiElement] | None = None
    prev_step_index: int | None = None

    downs = [e for e in events if e.kind == "touch_down"]

    for step in steps:
        fired = None
        lo = step.t_prev - cfg.animation_window_ms
        adjacent = prev_step_index is not None and step.index == prev_step_index + 1

        # (1) click
        if has_events:
            for k, ev in enumerate(downs):
                if id(ev) in consumed or not (lo < ev.t_ms <= step.t_next):
                    continue
                target = _click_on(step, ev.x, ev.y, cfg)
                if target is not None:
                    consumed.add(id(ev))
                    out.append(InteractionEvent(_clamp(ev.t_ms, step.t_prev, step.t_next), "click", target.id,
                                                element_label(step.prev, target.id)))
                    fired = "click"
                    break
        elif step.major and candidate is not None and adjacent and candidate[0].index == prev_step_index:
            cstep, target = candidate
            out.append(InteractionEvent(cstep.t_next, "click", target.id, element_label(cstep.prev, target.id),
                                        low_confidence=True))
            last_click_step = cstep.index
        candidate = None

        # (2) swipe
        if fired is None:
            moves_ok = not has_events or bool(_step_events(events, lo, step.t_next, "touch_move"))
            sw = _swipe(step, cfg, screen[0]) if moves_ok else None
            if sw is not None:
                direction, _ = sw
                new_touch = has_events and any(lo < e.t_ms <= step.t_next for e in downs if id(e) not in consumed)
                continuing = (last_swipe is not None and last_swipe[0] == direction and adjacent
                              and last_swipe[1] == prev_step_index and not new_touch)
                if not continuing:
                    t = step.t_next
                    for e in downs:
                        if id(e) not in consumed and lo < e.t_ms <= step.t_next:
                            consumed.add(id(e))
                            t = _clamp(e.t_ms, step.t_prev, step.t_next)
                            break
                    out.append(InteractionEvent(t, "swipe", direction=direction))
                last_swipe = (direction, step.index)
                fired = "swipe"

        # (3) adjust
        if fired is None:
            moves_ok = not has_events or bool(_step_events(events, lo, step.t_next, "touch_move"))
            adj = _adjust(step, cfg) if moves_ok else None
            if adj is not None:
                knob, shift = adj
                for e in downs:
                    if id(e) not in consumed and lo < e.t_ms <= step.t_next:
                        consumed.add(id(e))
                        break
                out.append(InteractionEvent(step.t_next, "adjust", knob.id, element_label(step.prev, knob.id),
                                            delta=int(shift)))
                fired = "adjust"

        # (4) transition
        if fired is None and step.major:
            explained = last_click_step is not None and adjacent and last_click_step == prev_step_index
            if not explained:
                out.append(InteractionEvent(step.t_next, "transition"))
            fired = "transition"

        if fired == "click":
            last_click_step = step.index
        if fired != "swipe":
            last_swipe = None
        # (5) anything else is animation; without events it may still be a click
        if fired is None and not has_events:
            target = _degraded_click(step, cfg)
            if target is not None:
                candidate = (step, target)
        prev_step_index = step.index

    out.sort(key=lambda e: e.t_ms)
    return InteractionSequence(log_id, out)


def tokenize(seq: InteractionSequence) -> list[str]:
    def norm(label: str | None, target_id: int | None) -> str:
        text = label if label else f"#{target_id}"
        return "_".join(text.lower().split())

    tokens = []
    for e in seq.events:
        if e.action == "click":
            tokens.append(f"click:{norm(e.target_label, e.target_id)}")
        elif e.action == "swipe":
            tokens.append(f"swipe:{e.direction}")
        elif e.action == "adjust":
            tokens.append(f"adjust:{norm(e.target_label, e.target_id)}:{'+' if (e.delta or 0) > 0 else '-'}")
        else:
            tokens.append("transition")
    return tokens


def read_interactions(path) -> InteractionSequence:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return InteractionSequence.from_json(obj)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed interactions file ({exc})") from exc
