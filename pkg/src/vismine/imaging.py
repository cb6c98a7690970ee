"""Raster types and the vision primitives the element detector is built on.

Everything here is a pure function of its inputs. Images are float64 numpy
arrays in [0, 1], shaped (H, W) for gray and (H, W, 3) for RGB; masks are
boolean (H, W) arrays. Coordinates handed back to callers are (x, y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from vismine.errors import InvalidInputError

DEFAULT_SIGMA = 1.4
DEFAULT_CANNY_LOW = 0.10
DEFAULT_CANNY_HIGH = 0.25
DEFAULT_DILATION_RADIUS = 1

CIRCLE_MIN_CIRCULARITY = 0.80
RECT_MIN_FILL = 0.85
ORIENTATION_TOLERANCE_DEG = 10.0
# second-moment anisotropy below which a region has no principal axis
ISOTROPY_TOLERANCE = 0.05

_LUMA = np.array([0.299, 0.587, 0.114])

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class Raster:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise InvalidInputError(f"raster must be HxW or HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("raster must be at least 1x1")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or not np.isfinite(arr).all()):
            raise InvalidInputError("raster values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def shape(self) -> tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BitMask:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise InvalidInputError(f"mask must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BitMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class Contour:
    points: tuple[tuple[int, int], ...]
    kind: Literal["outer", "hole"] = "outer"

    def __post_init__(self):
        if not self.points:
            raise InvalidInputError("contour needs at least one point")
        object.__setattr__(self, "points", tuple((int(x), int(y)) for x, y in self.points))

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        xs = [p[0] for p in self.points]
        ys = [p[1] for p in self.points]
        return min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1


@dataclass(frozen=True)
class ContourMetrics:
    area: int
    perimeter: float
    bbox: tuple[int, int, int, int]
    circularity: float
    rect_fill: float
    principal_angle: float


def gray(img: Raster) -> Raster:
    """Gray view of ``img``; gray rasters pass through unchanged."""
    return img if img.channels == 1 else to_grayscale(img)


def to_grayscale(img: Raster) -> Raster:
    if img.channels != 3:
        raise InvalidInputError(f"to_grayscale expects 3 channels, got {img.channels}")
    return Raster(np.clip(img.data @ _LUMA, 0.0, 1.0))


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: Raster, sigma: float = DEFAULT_SIGMA) -> Raster:
    if img.channels != 1:
        raise InvalidInputError("gaussian_blur expects a gray raster")
    if not (0 < sigma <= 10):
        raise InvalidInputError(f"sigma must be in (0, 10], got {sigma}")
    k = gaussian_kernel(sigma)
    # symmetric kernel: correlation == convolution; "nearest" replicates the border
    out = ndimage.correlate1d(img.data, k, axis=1, mode="nearest")
    out = ndimage.correlate1d(out, k, axis=0, mode="nearest")
    return Raster(np.clip(out, 0.0, 1.0))


def sobel(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives with border replication; y grows downward."""
    p = np.pad(arr, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy


def gradient_magnitude(img: Raster) -> np.ndarray:
    """Sobel magnitude scaled so the strongest pixel of the image is 1."""
    gx, gy = sobel(img.data)
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def canny(img: Raster, low: float = DEFAULT_CANNY_LOW, high: float = DEFAULT_CANNY_HIGH) -> BitMask:
    """Canny edges of an already-blurred gray raster.

    Gradient directions are quantized to 4 axes. A pixel survives
    non-maximum suppression when it strictly beats its neighbour on the
    negative side of the axis and is not beaten on the positive side, so a
    symmetric ridge collapses to a single pixel instead of a double line.
    """
    if img.channels != 1:
        raise InvalidInputError("canny expects a gray raster")
    if not (0 <= low < high <= 1):
        raise InvalidInputError(f"need 0 <= low < high <= 1, got low={low} high={high}")
    h, w = img.height, img.width
    gx, gy = sobel(img.data)
    mag = np.sqrt(gx * gx + gy * gy)
    peak = mag.max()
    if peak == 0:
        return BitMask(np.zeros((h, w), dtype=bool))
    mag = mag / peak
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0

    p = np.pad(mag, 1)

    def shifted(dx, dy):
        return p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    horiz = (angle < 22.5) | (angle >= 157.5)
    diag = (angle >= 22.5) & (angle < 67.5)
    vert = (angle >= 67.5) & (angle < 112.5)
    back = np.where(horiz, shifted(-1, 0),
                    np.where(diag, shifted(-1, -1),
                             np.where(vert, shifted(0, -1), shifted(1, -1))))
    fwd = np.where(horiz, shifted(1, 0),
                   np.where(diag, shifted(1, 1),
                            np.where(vert, shifted(0, 1), shifted(-1, 1))))
    thin = (mag > back) & (mag >= fwd) & (mag > 0)

    weak = thin & (mag >= low)
    strong = thin & (mag >= high)
    labels, n = ndimage.label(weak, structure=_EIGHT)
    if n == 0:
        return BitMask(np.zeros((h, w), dtype=bool))
    keep = np.zeros(n + 1, dtype=bool)
    keep[labels[strong]] = True
    keep[0] = False
    return BitMask(keep[labels])


def dilate(mask: BitMask, radius: int = DEFAULT_DILATION_RADIUS) -> BitMask:
    """Dilation by a (2r+1) square; the square is separable into two 1-D passes."""
    if not isinstance(radius, (int, np.integer)) or not (1 <= radius <= 10):
        raise InvalidInputError(f"radius must be an integer in [1, 10], got {radius}")
    bits = mask.bits
    h, w = bits.shape
    rows = bits.copy()
    for d in range(1, radius + 1):
        if d < w:
            rows[:, d:] |= bits[:, :-d]
            rows[:, :-d] |= bits[:, d:]
    out = rows.copy()
    for d in range(1, radius + 1):
        if d < h:
            out[d:, :] |= rows[:-d, :]
            out[:-d, :] |= rows[d:, :]
    return BitMask(out)


# Moore neighbourhood, clockwise on screen (y down), starting west.
_OFFSETS = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_DIRECTION = {off: i for i, off in enumerate(_OFFSETS)}


def _moore_trace(grid: np.ndarray, sx: int, sy: int) -> list[tuple[int, int]]:
    """Outer boundary of the 8-connected region of ``grid`` containing the
    raster-first pixel (sx, sy). ``grid`` must have a False frame so that
    neighbours never leave the array."""
    points = [(sx, sy)]
    cx, cy, back = sx, sy, 0
    second = None
    while True:
        for k in range(1, 9):
            d = (back + k) % 8
            ox, oy = _OFFSETS[d]
            nx, ny = cx + ox, cy + oy
            if grid[ny, nx]:
                break
        else:
            return points
        if cx == sx and cy == sy:
            # leaving the start the same way twice closes the loop
            if second is None:
                second = (nx, ny)
            elif (nx, ny) == second:
                points.pop()
                return points
        px, py = _OFFSETS[(d - 1) % 8]
        back = _DIRECTION[(cx + px - nx, cy + py - ny)]
        cx, cy = nx, ny
        points.append((cx, cy))


def _trace_region(region: np.ndarray, x0: int, y0: int) -> list[tuple[int, int]]:
    grid = np.pad(region, 1)
    flat = int(np.argmax(grid))
    sy, sx = divmod(flat, grid.shape[1])
    return [(x + x0 - 1, y + y0 - 1) for x, y in _moore_trace(grid, sx, sy)]


def trace_contours(mask: BitMask) -> list[Contour]:
    """Outer contour of every 8-connected component plus one hole contour for
    every enclosed 4-connected background region.

    A hole contour is the ring of foreground pixels touching the hole, traced
    as the boundary of the hole grown by its 4-neighbours. Contours come back
    sorted by their first boundary pixel (row, then column), outers first on
    ties.
    """
    fg = mask.bits
    h, w = fg.shape
    found = []

    labels, n = ndimage.label(fg, structure=_EIGHT)
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        region = labels[sl] == i
        pts = _trace_region(region, sl[1].start, sl[0].start)
        found.append((pts[0][1], pts[0][0], 0, Contour(tuple(pts), "outer")))

    bg_labels, m = ndimage.label(~fg, structure=_FOUR)
    if m:
        border = np.unique(np.concatenate(
            [bg_labels[0, :], bg_labels[-1, :], bg_labels[:, 0], bg_labels[:, -1]]))
        is_border = np.zeros(m + 1, dtype=bool)
        is_border[border] = True
        for j, sl in enumerate(ndimage.find_objects(bg_labels), start=1):
            if sl is None or is_border[j]:
                continue
            # holes never touch the image edge, so growing the crop by one is safe
            ys = slice(sl[0].start - 1, sl[0].stop + 1)
            xs = slice(sl[1].start - 1, sl[1].stop + 1)
            hole = bg_labels[ys, xs] == j
            grown = ndimage.binary_dilation(hole, structure=_FOUR)
            pts = _trace_region(grown, xs.start, ys.start)
            found.append((pts[0][1], pts[0][0], 1, Contour(tuple(pts), "hole")))

    found.sort(key=lambda t: t[:3])
    return [t[3] for t in found]


def fill_contour(c: Contour) -> tuple[np.ndarray, int, int]:
    """Pixels enclosed by a contour (boundary included) as a mask over its
    bbox, with the bbox origin."""
    x0, y0, bw, bh = c.bbox
    grid = np.zeros((bh, bw), dtype=bool)
    pts = np.asarray(c.points)
    grid[pts[:, 1] - y0, pts[:, 0] - x0] = True
    # an 8-connected closed curve cannot be crossed by 4-connected flood fill
    return ndimage.binary_fill_holes(grid), x0, y0


def contour_perimeter(c: Contour) -> float:
    pts = c.points
    if len(pts) == 1:
        return 1.0
    total = 0.0
    diag = math.sqrt(2.0)
    for (ax, ay), (bx, by) in zip(pts, pts[1:] + pts[:1]):
        total += diag if (ax != bx and ay != by) else 1.0
    return total


def contour_metrics(c: Contour) -> ContourMetrics:
    filled, x0, y0 = fill_contour(c)
    bbox = (x0, y0, filled.shape[1], filled.shape[0])
    area = int(filled.sum())
    perimeter = contour_perimeter(c)
    circularity = min(1.1, 4 * math.pi * area / (perimeter * perimeter))
    rect_fill = area / (bbox[2] * bbox[3])

    ys, xs = np.nonzero(filled)
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    mu20 = float((dx * dx).mean())
    mu02 = float((dy * dy).mean())
    mu11 = float((dx * dy).mean())
    spread = math.hypot(mu20 - mu02, 2 * mu11)
    if spread <= ISOTROPY_TOLERANCE * (mu20 + mu02):
        angle = 0.0
    else:
        angle = math.degrees(0.5 * math.atan2(2 * mu11, mu20 - mu02)) % 180.0
    return ContourMetrics(area, perimeter, bbox, circularity, rect_fill, angle)


Shape = Literal["rectangle", "circle", "irregular"]
Orientation = Literal["horizontal", "vertical", "irregular"]


def classify_shape(m: ContourMetrics,
                   circle_min: float = CIRCLE_MIN_CIRCULARITY,
                   rect_min: float = RECT_MIN_FILL,
                   tolerance: float = ORIENTATION_TOLERANCE_DEG) -> tuple[Shape, Orientation]:
    # fill is tested first: a filled box measured on its pixel-center path
    # scores above the circle cutoff until ~100 px, while a disc never fills
    # more than pi/4 of its box
    if m.rect_fill >= rect_min:
        shape = "rectangle"
    elif m.circularity >= circle_min:
        shape = "circle"
    else:
        shape = "irregular"

    _, _, w, h = m.bbox
    a = m.principal_angle
    if shape == "circle" and abs(w - h) <= 0.1 * max(w, h):
        orientation = "horizontal"
    elif a <= tolerance or a >= 180.0 - tolerance:
        orientation = "horizontal"
    elif abs(a - 90.0) <= tolerance:
        orientation = "vertical"
    else:
        orientation = "irregular"
    return shape, orientation
