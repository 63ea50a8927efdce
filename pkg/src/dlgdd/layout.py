"""Layout data model, latent sampling, validation and the procedural layout grammars.

Coordinates are page fractions with (x, y) at the top-left corner of a box.
"""
from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, ParseError, UsageError

N_MAX = 16
MIN_SIZE = 0.01
GRAMMAR_STYLES = ("academic", "magazine")


class ElementClass(enum.IntEnum):
    FIGURE = 0
    TABLE = 1
    TEXT = 2

    @property
    def tag(self) -> str:
        return self.name.lower()

    @property
    def mask_code(self) -> int:
        return int(self) + 1

    @classmethod
    def parse(cls, value) -> "ElementClass":
        if isinstance(value, ElementClass):
            return value
        if isinstance(value, bool):
            raise ValueError(f"invalid element class {value!r}")
        if isinstance(value, int):
            return cls(value)
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                pass
        raise ValueError(f"invalid element class {value!r}")


@dataclass(frozen=True)
class LayoutElement:
    cls: ElementClass
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        object.__setattr__(self, "cls", ElementClass.parse(self.cls))
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def area(self) -> float:
        return self.w * self.h

    def geometry(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def to_dict(self) -> dict:
        return {"class": self.cls.tag, "x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass(frozen=True)
class PageLayout:
    elements: tuple[LayoutElement, ...] = ()
    latent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if len(self.elements) > N_MAX:
            raise BoundsError(f"layout has {len(self.elements)} elements, limit is {N_MAX}")

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    def classes(self) -> np.ndarray:
        return np.array([int(e.cls) for e in self.elements], dtype=np.int64)

    def geometry(self) -> np.ndarray:
        """(n, 4) array of x, y, w, h."""
        if not self.elements:
            return np.zeros((0, 4))
        return np.array([e.geometry() for e in self.elements], dtype=np.float64)

    def permuted(self, order: Sequence[int]) -> "PageLayout":
        return PageLayout(tuple(self.elements[i] for i in order), self.latent)

    @classmethod
    def from_arrays(cls, classes, geometry, latent: bool = False) -> "PageLayout":
        geometry = np.asarray(geometry, dtype=np.float64).reshape(-1, 4)
        return cls(
            tuple(LayoutElement(ElementClass(int(c)), *g) for c, g in zip(classes, geometry)),
            latent,
        )


class ViolationKind(str, enum.Enum):
    OUT_OF_BOUNDS = "out_of_bounds"
    DEGENERATE_SIZE = "degenerate_size"
    EXCESSIVE_OVERLAP = "excessive_overlap"


@dataclass(frozen=True)
class ViolationReport:
    index: int
    kind: ViolationKind
    magnitude: float


def sample_latent_layout(n: int, seed: int, n_max: int = N_MAX) -> PageLayout:
    """Draw ``n`` latent elements: geometry from N(0, I), class uniform over the three classes."""
    if not 1 <= n <= n_max:
        raise BoundsError(f"n={n} outside [1, {n_max}]")
    rng = np.random.default_rng(seed)
    classes = rng.integers(0, len(ElementClass), size=n)
    geometry = rng.standard_normal((n, 4))
    return PageLayout.from_arrays(classes, geometry, latent=True)


def iou(a: LayoutElement, b: LayoutElement) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    # areas from edge differences, like the intersection, so identical boxes give exactly 1
    area_a = ((a.x + a.w) - a.x) * ((a.y + a.h) - a.y)
    area_b = ((b.x + b.w) - b.x) * ((b.y + b.h) - b.y)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def validate_layout(
    layout: PageLayout, overlap_threshold: float = 0.5, min_size: float = MIN_SIZE
) -> list[ViolationReport]:
    """List every bounds, size and pairwise-overlap violation in a decoded layout.

    One report per (element, kind); overlap is reported on the later element of a pair.
    """
    if layout.latent:
        raise UsageError("validate_layout needs a decoded layout, got a latent one")
    if not 0.0 <= overlap_threshold <= 1.0:
        raise UsageError(f"overlap_threshold {overlap_threshold} outside [0, 1]")
    reports = []
    for i, e in enumerate(layout.elements):
        excess = max(-e.x, -e.y, e.x + e.w - 1.0, e.y + e.h - 1.0)
        if excess > 0.0:
            reports.append(ViolationReport(i, ViolationKind.OUT_OF_BOUNDS, excess))
        shortfall = max(min_size - e.w, min_size - e.h)
        if shortfall > 0.0:
            reports.append(ViolationReport(i, ViolationKind.DEGENERATE_SIZE, shortfall))
    for i, j in itertools.combinations(range(len(layout)), 2):
        v = iou(layout[i], layout[j])
        if v > overlap_threshold:
            reports.append(ViolationReport(j, ViolationKind.EXCESSIVE_OVERLAP, v))
    return reports


def is_valid(layout: PageLayout, overlap_threshold: float = 0.5) -> bool:
    return not validate_layout(layout, overlap_threshold)


def uniform_random_layout(n: int, rng: np.random.Generator, min_size: float = MIN_SIZE) -> PageLayout:
    """Boxes with uniform corners; the baseline the generator has to beat."""
    elems = []
    for _ in range(n):
        w = rng.uniform(min_size, 1.0)
        h = rng.uniform(min_size, 1.0)
        x = rng.uniform(0.0, 1.0 - w)
        y = rng.uniform(0.0, 1.0 - h)
        elems.append(LayoutElement(ElementClass(int(rng.integers(0, 3))), x, y, w, h))
    return PageLayout(tuple(elems))


# --- procedural grammars -------------------------------------------------------

_GAP = 0.015


def _academic(rng: np.random.Generator) -> PageLayout:
    mx = rng.uniform(0.06, 0.10)
    top = rng.uniform(0.05, 0.08)
    bottom = 1.0 - rng.uniform(0.05, 0.08)
    ncols = int(rng.integers(1, 3))
    gutter = 0.03
    cw = (1.0 - 2 * mx - gutter * (ncols - 1)) / ncols
    col_x = [mx + k * (cw + gutter) for k in range(ncols)]

    n_floats = int(rng.integers(0, 3))
    float_cols = [int(rng.integers(0, ncols)) for _ in range(n_floats)]
    elems: list[LayoutElement] = []
    for k, cx in enumerate(col_x):
        pending = [
            ElementClass.FIGURE if rng.random() < 0.6 else ElementClass.TABLE
            for c in float_cols
            if c == k
        ]
        y = top
        while y < bottom - 0.07:
            place_float = pending and (rng.random() < 0.5 or y > bottom - 0.3)
            if place_float:
                cls = pending.pop(0)
                h = rng.uniform(0.12, 0.25) if ncols == 2 else rng.uniform(0.15, 0.3)
                if y + h > bottom:
                    h = bottom - y
                if h < 0.1:
                    break
                fw = cw * rng.uniform(0.75, 1.0) if cls is ElementClass.FIGURE else cw
                elems.append(LayoutElement(cls, cx, y, fw, h))
            else:
                h = min(rng.uniform(0.08, 0.24), bottom - y)
                if h < 0.07:
                    break
                elems.append(LayoutElement(ElementClass.TEXT, cx, y, cw, h))
            y += h + rng.uniform(_GAP, 0.025)
    return PageLayout(tuple(elems[:N_MAX]))


def _split(rng, rect, horizontal, lo=0.3, hi=0.7):
    x, y, w, h = rect
    r = rng.uniform(lo, hi)
    if horizontal:
        a = h * r
        return (x, y, w, a - _GAP / 2), (x, y + a + _GAP / 2, w, h - a - _GAP / 2)
    a = w * r
    return (x, y, a - _GAP / 2, h), (x + a + _GAP / 2, y, w - a - _GAP / 2, h)


def _magazine(rng: np.random.Generator) -> PageLayout:
    m = rng.uniform(0.04, 0.07)
    content = (m, m, 1.0 - 2 * m, 1.0 - 2 * m)
    horizontal = rng.random() < 0.6
    hero, rest = _split(rng, content, horizontal, 0.45, 0.7)
    if rng.random() < 0.5:
        hero, rest = _split(rng, content, horizontal, 0.3, 0.55)[::-1]
    elems = [LayoutElement(ElementClass.FIGURE, *hero)]

    cells = [rest]
    for _ in range(int(rng.integers(1, 4))):
        cells.sort(key=lambda r: r[2] * r[3], reverse=True)
        x, y, w, h = cells[0]
        horiz = h > w if rng.random() < 0.8 else h <= w
        size = h if horiz else w
        if size < 0.3:
            horiz = not horiz
            size = h if horiz else w
            if size < 0.3:
                break
        cells[0:1] = list(_split(rng, cells[0], horiz, 0.35, 0.65))

    for x, y, w, h in cells:
        if rng.random() < 0.2 and w > 0.15 and h > 0.12:
            elems.append(LayoutElement(ElementClass.FIGURE, x, y, w, h))
            continue
        # ragged text blocks: shrink and shift inside the cell
        sw = w * rng.uniform(0.7, 1.0)
        sh = h * rng.uniform(0.75, 1.0)
        elems.append(
            LayoutElement(
                ElementClass.TEXT,
                x + rng.uniform(0.0, w - sw),
                y + rng.uniform(0.0, h - sh),
                sw,
                sh,
            )
        )
    return PageLayout(tuple(elems))


def grammar_generate_corpus(style: str, count: int, seed: int) -> list[PageLayout]:
    if style not in GRAMMAR_STYLES:
        raise UsageError(f"unknown grammar style {style!r}; expected one of {GRAMMAR_STYLES}")
    if count < 1:
        raise UsageError(f"count must be positive, got {count}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, GRAMMAR_STYLES.index(style)]))
    build = _academic if style == "academic" else _magazine
    return [build(rng) for _ in range(count)]


def element_count_distribution(layouts: Iterable[PageLayout]) -> np.ndarray:
    """Empirical probabilities of element count 0..N_MAX."""
    counts = np.zeros(N_MAX + 1)
    for layout in layouts:
        counts[len(layout)] += 1
    if counts.sum() == 0:
        raise UsageError("empty layout collection")
    return counts / counts.sum()


# --- serialization -------------------------------------------------------------

_ELEMENT_KEYS = ("class", "x", "y", "w", "h")


def layouts_to_dict(layouts: Iterable[PageLayout]) -> dict:
    pages = []
    for layout in layouts:
        page = {"elements": [e.to_dict() for e in layout.elements]}
        if layout.latent:
            page["latent"] = True
        pages.append(page)
    return {"pages": pages}


def write_layouts(layouts: Iterable[PageLayout], path) -> None:
    # json writes floats via repr: shortest round-tripping form
    Path(path).write_text(json.dumps(layouts_to_dict(layouts), indent=1) + "\n")


def _parse_element(rec, where: str) -> LayoutElement:
    if not isinstance(rec, dict):
        raise ParseError(f"{where}: expected an object, got {type(rec).__name__}")
    extra = [k for k in rec if k not in _ELEMENT_KEYS]
    if extra:
        raise ParseError(f"{where}: unexpected field(s) {', '.join(map(repr, extra))}")
    missing = [k for k in _ELEMENT_KEYS if k not in rec]
    if missing:
        raise ParseError(f"{where}: missing field(s) {', '.join(map(repr, missing))}")
    try:
        cls = ElementClass.parse(rec["class"])
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None
    vals = []
    for k in _ELEMENT_KEYS[1:]:
        v = rec[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"{where}: field {k!r} must be a finite number, got {v!r}")
        vals.append(v)
    return LayoutElement(cls, *vals)


def layouts_from_dict(doc) -> list[PageLayout]:
    if not isinstance(doc, dict) or "pages" not in doc:
        raise ParseError("top level must be an object with a 'pages' list")
    if not isinstance(doc["pages"], list):
        raise ParseError("'pages' must be a list")
    out = []
    for p, page in enumerate(doc["pages"]):
        if not isinstance(page, dict) or not isinstance(page.get("elements"), list):
            raise ParseError(f"page {p}: expected an object with an 'elements' list")
        extra = [k for k in page if k not in ("elements", "latent")]
        if extra:
            raise ParseError(f"page {p}: unexpected field(s) {', '.join(map(repr, extra))}")
        elems = tuple(
            _parse_element(rec, f"page {p} element {i}") for i, rec in enumerate(page["elements"])
        )
        try:
            out.append(PageLayout(elems, bool(page.get("latent", False))))
        except BoundsError as exc:
            raise ParseError(f"page {p}: {exc}") from None
    return out


def read_layouts(path) -> list[PageLayout]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        return layouts_from_dict(doc)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None
