"""GUI element detection on a single screen frame.

Pipeline: text regions from a pluggable detector, then gray -> blur ->
Canny -> dilation -> contours -> merge -> size/shape filter -> typing ->
relations. Text regions always become Text elements; contours mostly
covered by text are dropped so nothing is counted twice.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from vismine import imaging
from vismine.errors import InvalidInputError, TextDetectionError
from vismine.imaging import Contour, ContourMetrics, Raster

log = logging.getLogger(__name__)

ElementType = Literal["text", "icon", "comb"]
RelationKind = Literal["below", "right", "left", "above", "inside"]
BBox = tuple[int, int, int, int]

# NMS tie-breaks on curved or short edges can shift an edge by one pixel,
# so the inside of a dilated border may sit one pixel deeper than the margin
EDGE_JITTER = 1


@dataclass(frozen=True)
class TextRegion:
    bbox: BBox
    text: str


@dataclass
class DetectorConfig:
    min_rel_size: float = 0.0001
    max_irregular_rel_size: float = 0.01
    comb_min_rel_size: float = 0.01
    merge_margin: int | None = None          # pixels; None -> 2 * dilation_radius
    relation_gap: float | None = None        # pixels; None -> 0.02 * screen height
    alignment_tolerance: float | None = None  # pixels; None -> 0.01 * screen width
    text_overlap_suppress: float = 0.5
    sigma: float = imaging.DEFAULT_SIGMA
    canny_low: float = imaging.DEFAULT_CANNY_LOW
    canny_high: float = imaging.DEFAULT_CANNY_HIGH
    dilation_radius: int = imaging.DEFAULT_DILATION_RADIUS
    circle_min_circularity: float = imaging.CIRCLE_MIN_CIRCULARITY
    rect_min_fill: float = imaging.RECT_MIN_FILL
    orientation_tolerance: float = imaging.ORIENTATION_TOLERANCE_DEG
    text_policy: Literal["strict", "lenient"] = "strict"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (0 < self.min_rel_size < self.max_irregular_rel_size < 1):
            raise InvalidInputError("need 0 < min_rel_size < max_irregular_rel_size < 1")
        if not (0 < self.comb_min_rel_size < 1):
            raise InvalidInputError("comb_min_rel_size must be in (0, 1)")
        if self.merge_margin is not None and self.merge_margin < 0:
            raise InvalidInputError("merge_margin must be >= 0")
        for name in ("relation_gap", "alignment_tolerance"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if not (0 < self.text_overlap_suppress <= 1):
            raise InvalidInputError("text_overlap_suppress must be in (0, 1]")
        if not (0 < self.sigma <= 10):
            raise InvalidInputError("sigma must be in (0, 10]")
        if not (0 <= self.canny_low < self.canny_high <= 1):
            raise InvalidInputError("need 0 <= canny_low < canny_high <= 1")
        if not isinstance(self.dilation_radius, int) or not (1 <= self.dilation_radius <= 10):
            raise InvalidInputError("dilation_radius must be an integer in [1, 10]")
        if self.text_policy not in ("strict", "lenient"):
            raise InvalidInputError("text_policy must be 'strict' or 'lenient'")

    @property
    def margin(self) -> int:
        return 2 * self.dilation_radius if self.merge_margin is None else self.merge_margin

    def gap_for(self, screen: tuple[int, int]) -> float:
        return 0.02 * screen[1] if self.relation_gap is None else self.relation_gap

    def tolerance_for(self, screen: tuple[int, int]) -> float:
        return 0.01 * screen[0] if self.alignment_tolerance is None else self.alignment_tolerance

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown detector config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class GuiElement:
    id: int
    etype: ElementType
    bbox: BBox
    shape: str
    orientation: str
    rel_size: float
    label: str | None = None
    children: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "type": self.etype,
            "bbox": list(self.bbox),
            "shape": self.shape,
            "orientation": self.orientation,
            "rel_size": round(self.rel_size, 8),
        }
        if self.label is not None:
            out["label"] = self.label
        out["children"] = list(self.children)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GuiElement":
        return cls(obj["id"], obj["type"], tuple(obj["bbox"]), obj["shape"], obj["orientation"],
                   obj["rel_size"], obj.get("label"), list(obj.get("children", [])))


@dataclass(frozen=True)
class ElementRelation:
    source: int
    target: int
    kind: RelationKind

    def to_json(self) -> dict:
        return {"source": self.source, "target": self.target, "kind": self.kind}


@dataclass
class FrameDetection:
    frame: int
    elements: list[GuiElement]
    relations: list[ElementRelation]

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "elements": [e.to_json() for e in self.elements],
            "relations": [r.to_json() for r in self.relations],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FrameDetection":
        return cls(obj["frame"], [GuiElement.from_json(e) for e in obj["elements"]],
                   [ElementRelation(r["source"], r["target"], r["kind"]) for r in obj["relations"]])


# --------------------------------------------------------------------------
# text detection

class TextDetector:
    name = "none"

    def detect(self, frame: Raster, frame_index: int | None = None,
               frame_path: Path | None = None) -> list[TextRegion]:
        return []


class OracleTextDetector(TextDetector):
    """Reads ground-truth text boxes from a fixture sidecar.

    A box is only reported while its pixels still vary; a region painted
    flat (for instance by anonymization) no longer carries text.
    """

    name = "oracle"

    def __init__(self, regions_by_frame: dict[int, list[TextRegion]]):
        self.regions_by_frame = regions_by_frame

    @classmethod
    def from_truth(cls, path: str | Path) -> "OracleTextDetector":
        truth = json.loads(Path(path).read_text(encoding="utf-8"))
        by_frame = {}
        for fr in truth["frames"]:
            by_frame[fr["frame"]] = [TextRegion(tuple(e["bbox"]), e.get("label", ""))
                                     for e in fr["elements"] if e["type"] == "text"]
        return cls(by_frame)

    def detect(self, frame, frame_index=None, frame_path=None):
        regions = self.regions_by_frame.get(0 if frame_index is None else frame_index, [])
        data = frame.data
        found = []
        for r in regions:
            x, y, w, h = r.bbox
            crop = data[y:y + h, x:x + w]
            if crop.size and float(crop.max() - crop.min()) > 1e-6:
                found.append(r)
        return found


class ExternalTextDetector(TextDetector):
    """Runs ``<command> <frame.png>``; the command prints a JSON array of
    ``{"bbox": [x, y, w, h], "text": s}`` objects and exits 0."""

    name = "external"

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout

    def detect(self, frame, frame_index=None, frame_path=None):
        if frame_path is not None:
            return self._run(Path(frame_path), frame)
        from vismine.vislog import write_image

        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / "frame.png"
            write_image(frame, p)
            return self._run(p, frame)

    def _run(self, path: Path, frame: Raster) -> list[TextRegion]:
        argv = shlex.split(self.command) + [str(path)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise TextDetectionError(f"text detector {argv[0]!r} failed to run", str(exc)) from exc
        if proc.returncode != 0:
            raise TextDetectionError(f"text detector exited with status {proc.returncode}", proc.stderr)
        try:
            items = json.loads(proc.stdout)
        except json.JSONDecodeError as exc:
            raise TextDetectionError("text detector printed malformed JSON", proc.stdout[:2000]) from exc
        return parse_text_regions(items, frame.width, frame.height)


def parse_text_regions(items, width: int, height: int) -> list[TextRegion]:
    if not isinstance(items, list):
        raise TextDetectionError("text detector output must be a JSON array", repr(items)[:2000])
    regions = []
    for i, item in enumerate(items):
        try:
            x, y, w, h = (int(v) for v in item["bbox"])
            text = str(item.get("text", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise TextDetectionError(f"text region {i} is malformed", repr(item)[:2000]) from exc
        # clip into the frame; regions are contractually inside it
        x0, y0 = max(0, x), max(0, y)
        x1, y1 = min(width, x + w), min(height, y + h)
        if x1 > x0 and y1 > y0:
            regions.append(TextRegion((x0, y0, x1 - x0, y1 - y0), text))
    return regions


def make_text_detector(spec: str, truth_path: Path | None = None) -> TextDetector:
    """Build a detector from a CLI selector: ``none``, ``oracle`` or ``external:<cmd>``."""
    if spec == "none":
        return TextDetector()
    if spec == "oracle":
        if truth_path is None or not Path(truth_path).is_file():
            raise InvalidInputError(f"oracle text detector needs a truth sidecar, not found: {truth_path}")
        return OracleTextDetector.from_truth(truth_path)
    if spec.startswith("external:") and spec[len("external:"):].strip():
        return ExternalTextDetector(spec[len("external:"):].strip())
    raise InvalidInputError(f"unknown text detector {spec!r}")


def detect_text(frame: Raster, detector: TextDetector, frame_index: int | None = None,
                frame_path: Path | None = None, policy: str = "strict") -> list[TextRegion]:
    try:
        return detector.detect(frame, frame_index=frame_index, frame_path=frame_path)
    except TextDetectionError as exc:
        if policy == "lenient":
            log.warning("text detection failed on frame %s: %s\n%s", frame_index, exc, exc.diagnostics)
            return []
        raise


# --------------------------------------------------------------------------
# contour handling

def _bbox_array(contours: Sequence[Contour]) -> np.ndarray:
    return np.array([c.bbox for c in contours], dtype=np.int64).reshape(-1, 4)


def _insets(inner: np.ndarray, outer: np.ndarray) -> np.ndarray:
    """Per-side insets of every inner box within every outer box, shape (n_in, n_out, 4)."""
    ix, iy, iw, ih = (inner[:, k][:, None] for k in range(4))
    ox, oy, ow, oh = (outer[:, k][None, :] for k in range(4))
    return np.stack([ix - ox, iy - oy, (ox + ow) - (ix + iw), (oy + oh) - (iy + ih)], axis=-1)


def merge_contours(contours: Sequence[Contour], margin: int) -> list[Contour]:
    """Collapse the double contours a dilated border produces.

    A hole whose box sits inside an outer box with every side inset by at
    most ``margin`` is the inside of that same border and is dropped. Outer
    contours nested within ``margin`` of each other are one object; the
    larger box survives.
    """
    if margin < 0:
        raise InvalidInputError("margin must be >= 0")
    outers = [c for c in contours if c.kind == "outer"]
    holes = [c for c in contours if c.kind == "hole"]
    ob = _bbox_array(outers)

    keep_hole = np.ones(len(holes), dtype=bool)
    if holes and outers:
        ins = _insets(_bbox_array(holes), ob)
        paired = ((ins >= 0) & (ins <= margin)).all(axis=-1)
        keep_hole = ~paired.any(axis=1)

    keep_outer = np.ones(len(outers), dtype=bool)
    if len(outers) > 1:
        ins = _insets(ob, ob)
        nested = ((ins >= 0) & (ins <= margin)).all(axis=-1)
        np.fill_diagonal(nested, False)
        area = ob[:, 2] * ob[:, 3]
        npts = np.array([len(c.points) for c in outers])
        for i, j in zip(*np.nonzero(nested)):
            # i lies within margin of j: drop i unless it is the bigger twin
            if (area[i], npts[i], -i) < (area[j], npts[j], -j):
                keep_outer[i] = False

    keep = {id(c) for c, k in zip(outers, keep_outer) if k}
    keep |= {id(c) for c, k in zip(holes, keep_hole) if k}
    return [c for c in contours if id(c) in keep]


@dataclass
class _Candidate:
    contour: Contour | None
    bbox: BBox
    rel_size: float
    shape: str
    orientation: str
    from_text: bool = False
    label: str | None = None


def _shape_of(metrics: ContourMetrics, cfg: DetectorConfig) -> tuple[str, str]:
    return imaging.classify_shape(metrics, cfg.circle_min_circularity, cfg.rect_min_fill,
                                  cfg.orientation_tolerance)


def _passes_rules(rel: float, shape: str, orientation: str, cfg: DetectorConfig) -> bool:
    if rel < cfg.min_rel_size:
        return False
    if rel > cfg.max_irregular_rel_size and (shape == "irregular" or orientation == "irregular"):
        return False
    return True


def filter_contours(contours: Sequence[Contour], screen_area: float, cfg: DetectorConfig) -> list[Contour]:
    """Drop contours too small to be touchable, and large ones that are
    neither a clean rectangle/circle nor axis aligned."""
    if screen_area <= 0:
        raise InvalidInputError("screen_area must be positive")
    out = []
    for c in contours:
        _, _, w, h = c.bbox
        rel = w * h / screen_area
        if rel < cfg.min_rel_size:
            continue
        shape, orientation = _shape_of(imaging.contour_metrics(c), cfg)
        if _passes_rules(rel, shape, orientation, cfg):
            out.append(c)
    return out


def _strictly_contains(outer: BBox, inner: BBox) -> bool:
    ox, oy, ow, oh = outer
    ix, iy, iw, ih = inner
    return (ox <= ix and oy <= iy and ix + iw <= ox + ow and iy + ih <= oy + oh
            and (ox, oy, ow, oh) != (ix, iy, iw, ih))


def classify_type(candidate: _Candidate, candidates: Sequence[_Candidate], cfg: DetectorConfig) -> ElementType:
    if candidate.from_text:
        return "text"
    if any(o is not candidate and _strictly_contains(candidate.bbox, o.bbox) for o in candidates):
        return "comb"
    if candidate.rel_size >= cfg.comb_min_rel_size and candidate.shape in ("rectangle", "circle"):
        return "comb"
    return "icon"


def _overlap(a: BBox, b: BBox) -> int:
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    return w * h if w > 0 and h > 0 else 0


def _center(b: BBox) -> tuple[float, float]:
    return b[0] + b[2] / 2.0, b[1] + b[3] / 2.0


def infer_relations(elements: Sequence[GuiElement], cfg: DetectorConfig,
                    screen: tuple[int, int]) -> list[ElementRelation]:
    """``inside`` for every element nested in a Comb (closest parent only),
    plus at most one positional relation per Text to its nearest aligned
    Icon/Comb."""
    gap = cfg.gap_for(screen)
    tol = cfg.tolerance_for(screen)
    rels = []

    for e in elements:
        parents = [p for p in elements if p.etype == "comb" and p.id != e.id and _strictly_contains(p.bbox, e.bbox)]
        if parents:
            parent = min(parents, key=lambda p: (p.bbox[2] * p.bbox[3], p.id))
            rels.append(ElementRelation(e.id, parent.id, "inside"))

    for t in elements:
        if t.etype != "text":
            continue
        tx, ty, tw, th = t.bbox
        tcx, tcy = _center(t.bbox)
        best = None
        for o in elements:
            if o.etype == "text" or _overlap(t.bbox, o.bbox):
                continue
            ox, oy, ow, oh = o.bbox
            ocx, ocy = _center(o.bbox)
            if abs(tcx - ocx) <= tol:
                if ty >= oy + oh:
                    kind, g = "below", ty - (oy + oh)
                elif oy >= ty + th:
                    kind, g = "above", oy - (ty + th)
                else:
                    continue
            elif abs(tcy - ocy) <= tol:
                if tx >= ox + ow:
                    kind, g = "right", tx - (ox + ow)
                elif ox >= tx + tw:
                    kind, g = "left", ox - (tx + tw)
                else:
                    continue
            else:
                continue
            if g > gap:
                continue
            key = (g, (tcx - ocx) ** 2 + (tcy - ocy) ** 2, o.id)
            if best is None or key < best[0]:
                best = (key, o.id, kind)
        if best is not None:
            rels.append(ElementRelation(t.id, best[1], best[2]))

    rels.sort(key=lambda r: (r.source, r.target, r.kind))
    return rels


def _inset(bbox: BBox, r: int) -> BBox:
    x, y, w, h = bbox
    dx = min(r, (w - 1) // 2)
    dy = min(r, (h - 1) // 2)
    return x + dx, y + dy, w - 2 * dx, h - 2 * dy


def edge_contours(frame: Raster, cfg: DetectorConfig) -> list[Contour]:
    g = imaging.gray(frame)
    blurred = imaging.gaussian_blur(g, cfg.sigma)
    edges = imaging.canny(blurred, cfg.canny_low, cfg.canny_high)
    thick = imaging.dilate(edges, cfg.dilation_radius)
    return imaging.trace_contours(thick)


def detect_elements(frame: Raster, text: Sequence[TextRegion],
                    cfg: DetectorConfig | None = None) -> tuple[list[GuiElement], list[ElementRelation]]:
    cfg = cfg or DetectorConfig()
    screen = (frame.width, frame.height)
    area = float(frame.width * frame.height)

    contours = merge_contours(edge_contours(frame, cfg), cfg.margin + EDGE_JITTER)

    text_boxes = [r.bbox for r in text]
    candidates = []
    for c in contours:
        cb = c.bbox
        if cb[2] * cb[3] / area < cfg.min_rel_size:
            continue
        shape, orientation = _shape_of(imaging.contour_metrics(c), cfg)
        if not _passes_rules(cb[2] * cb[3] / area, shape, orientation, cfg):
            continue
        # report the object, not the dilated outline around it
        bbox = _inset(cb, cfg.dilation_radius)
        rel = bbox[2] * bbox[3] / area
        if rel < cfg.min_rel_size:
            continue
        covered = sum(_overlap(bbox, tb) for tb in text_boxes)
        if covered >= cfg.text_overlap_suppress * bbox[2] * bbox[3]:
            continue
        candidates.append(_Candidate(c, bbox, rel, shape, orientation))

    for r in text:
        rel = r.bbox[2] * r.bbox[3] / area
        candidates.append(_Candidate(None, r.bbox, rel, "rectangle", "horizontal", True, r.text))

    typed = [(classify_type(c, candidates, cfg), c) for c in candidates]
    typed.sort(key=lambda tc: (tc[1].bbox[1], tc[1].bbox[0], tc[1].bbox[3], tc[1].bbox[2], tc[0]))

    elements = [GuiElement(i, et, c.bbox, c.shape, c.orientation, c.rel_size, c.label)
                for i, (et, c) in enumerate(typed)]
    relations = infer_relations(elements, cfg, screen)
    by_id = {e.id: e for e in elements}
    for r in relations:
        if r.kind == "inside":
            by_id[r.target].children.append(r.source)
    return elements, relations


def detect_frame(frame: Raster, detector: TextDetector, cfg: DetectorConfig, frame_index: int = 0,
                 frame_path: Path | None = None) -> FrameDetection:
    text = detect_text(frame, detector, frame_index, frame_path, cfg.text_policy)
    elements, relations = detect_elements(frame, text, cfg)
    return FrameDetection(frame_index, elements, relations)


def config_to_dict(cfg: DetectorConfig) -> dict:
    return asdict(cfg)
