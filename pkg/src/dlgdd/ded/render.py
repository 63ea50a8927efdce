"""Fill a decoded layout with pictures and text; emit the page, its class mask and a render log.

Pixel convention: a box spans columns ``floor(x*W) .. floor((x+w)*W) - 1`` and rows
``floor(y*H) .. floor((y+h)*H) - 1`` on both the page and the mask.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..errors import BoxTooSmallError, ConfigError, DLGDDError, UsageError
from ..layout import ElementClass, PageLayout
from .assets import AssetLibrary, load_font

MIN_PAGE = 256
MIN_IMAGE_BOX = 8
MIN_TEXT_BOX = 16
MIN_FONT = 8
LINE_SPACING = 1.2
FALLBACK_SCALE = (1.25, 1.5)

# display colours for mask codes 0..3: background, figure, table, text
MASK_COLORS = np.array([(0, 0, 0), (255, 0, 0), (0, 0, 255), (0, 255, 0)], dtype=np.uint8)


@dataclass(frozen=True)
class CropSpec:
    image: int
    source: tuple[int, int, int, int]  # x, y, w, h inside the (possibly rescaled) source
    dest: tuple[int, int]  # w, h
    fallback: bool = False
    source_size: tuple[int, int] = (0, 0)  # W, H of the picture the crop is taken from

    def to_dict(self) -> dict:
        return {
            "image": self.image,
            "source": list(self.source),
            "dest": list(self.dest),
            "fallback": self.fallback,
            "source_size": list(self.source_size),
        }


@dataclass
class RenderedPage:
    page: np.ndarray  # H x W x 3 uint8
    mask: np.ndarray  # H x W uint8 class codes
    layout: PageLayout
    log: list[dict] = field(default_factory=list)
    seed: int | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.page.shape[1], self.page.shape[0]


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def pixel_rect(x, y, w, h, page_w: int, page_h: int) -> tuple[int, int, int, int]:
    """(x0, y0, x1, y1) half-open pixel rectangle of a normalized box."""
    eps = 1e-9
    x0 = min(max(math.floor(x * page_w + eps), 0), page_w)
    y0 = min(max(math.floor(y * page_h + eps), 0), page_h)
    x1 = min(max(math.floor((x + w) * page_w + eps), 0), page_w)
    y1 = min(max(math.floor((y + h) * page_h + eps), 0), page_h)
    return x0, y0, x1, y1


def eligible_images(sizes: np.ndarray, w_px: int, h_px: int) -> np.ndarray:
    """Indices of pictures with ``w <= W <= 1.5 w`` and ``h <= H <= 2 h``."""
    W, H = sizes[:, 0], sizes[:, 1]
    ok = (W >= w_px) & (2 * W <= 3 * w_px) & (H >= h_px) & (H <= 2 * h_px)
    return np.flatnonzero(ok)


def select_image(assets: AssetLibrary, w_px: int, h_px: int, rng) -> CropSpec:
    if not assets.images:
        raise ConfigError("asset library has no images")
    if w_px < MIN_IMAGE_BOX or h_px < MIN_IMAGE_BOX:
        raise BoxTooSmallError(f"picture box {w_px}x{h_px} px is below {MIN_IMAGE_BOX} px")
    rng = _rng(rng)
    candidates = eligible_images(assets.sizes, w_px, h_px)
    if len(candidates):
        idx = int(candidates[rng.integers(len(candidates))])
        W, H = (int(v) for v in assets.sizes[idx])
        fallback = False
    else:
        idx = int(rng.integers(len(assets.images)))
        W = max(w_px, round(FALLBACK_SCALE[0] * w_px))
        H = max(h_px, round(FALLBACK_SCALE[1] * h_px))
        fallback = True
    sx = int(rng.integers(0, W - w_px + 1))
    sy = int(rng.integers(0, H - h_px + 1))
    return CropSpec(idx, (sx, sy, w_px, h_px), (w_px, h_px), fallback, (W, H))


def crop_pixels(assets: AssetLibrary, spec: CropSpec) -> np.ndarray:
    src = assets.images[spec.image]
    if spec.fallback:
        src = np.asarray(Image.fromarray(src).resize(spec.source_size, Image.BILINEAR))
    x, y, w, h = spec.source
    return src[y : y + h, x : x + w]


def _wrap_lines(words, word_w, space_w, box_w, n_lines):
    """Greedy wrap of the word stream into ``n_lines`` lines."""
    lines, i, n = [], 0, len(words)
    for _ in range(n_lines):
        line, width = [], 0.0
        while True:
            wd = words[i % n]
            ww = word_w[i % n]
            extra = ww if not line else space_w + ww
            if line and width + extra > box_w:
                break
            line.append(wd)
            width += extra
            i += 1
            if width >= box_w:
                break
        lines.append(" ".join(line))
    return lines


def render_text_block(assets: AssetLibrary, w_px: int, h_px: int, rng):
    """Text raster of exactly ``h_px x w_px`` plus its style record.

    Font size is uniform over ``[8, floor(h_px / 2)]``; lines are wrapped at the box
    width and emitted until the text covers the box, then cropped at the top-left.
    """
    if h_px < MIN_TEXT_BOX:
        raise BoxTooSmallError(f"text box height {h_px} px is below {MIN_TEXT_BOX} px")
    if w_px < 1:
        raise BoxTooSmallError(f"text box width {w_px} px")
    rng = _rng(rng)
    size = int(rng.integers(MIN_FONT, h_px // 2 + 1))
    font_idx = int(rng.integers(len(assets.fonts)))
    color = tuple(int(c) for c in assets.palette[int(rng.integers(len(assets.palette)))])
    offset = int(rng.integers(len(assets.sentences)))
    font = load_font(assets.fonts[font_idx], size)

    sentences = assets.sentences[offset:] + assets.sentences[:offset]
    words: list[str] = []
    for s in sentences:
        words.extend(s.split())
        if len(words) > 4000:
            break
    space_w = font.getlength(" ")
    cache: dict[str, float] = {}
    for wd in words:
        if wd not in cache:
            cache[wd] = font.getlength(wd)
    word_w = [cache[wd] for wd in words]

    line_h = max(1, round(LINE_SPACING * size))
    n_lines = -(-h_px // line_h)
    lines = _wrap_lines(words, word_w, space_w, w_px, n_lines)
    text_w = max(math.ceil(font.getlength(l)) for l in lines)
    ext_w, ext_h = max(w_px, text_w), n_lines * line_h

    canvas = Image.new("RGB", (ext_w, ext_h), "white")
    draw = ImageDraw.Draw(canvas)
    for k, line in enumerate(lines):
        draw.text((0, k * line_h), line, font=font, fill=color)
    raster = np.asarray(canvas)[:h_px, :w_px]
    style = {
        "font": Path(assets.fonts[font_idx]).name,
        "size": size,
        "color": list(color),
        "sentence_offset": offset,
        "lines": n_lines,
        "extent": [ext_w, ext_h],
    }
    return raster, style


def decorate(layout: PageLayout, assets: AssetLibrary, page_size=(384, 512), rng=0) -> RenderedPage:
    """Composite pictures and text for each box in list order onto a white page."""
    if layout.latent:
        raise UsageError("decorate needs a decoded layout")
    W, H = page_size
    if W < MIN_PAGE or H < MIN_PAGE:
        raise UsageError(f"page size {W}x{H} below {MIN_PAGE}x{MIN_PAGE}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = _rng(rng)
    page = np.full((H, W, 3), 255, dtype=np.uint8)
    mask = np.zeros((H, W), dtype=np.uint8)
    log = []
    for i, e in enumerate(layout.elements):
        x0, y0, x1, y1 = pixel_rect(e.x, e.y, e.w, e.h, W, H)
        w_px, h_px = x1 - x0, y1 - y0
        rec = {"index": i, "class": e.cls.tag, "box": [x0, y0, x1, y1]}
        try:
            if e.cls is ElementClass.TEXT:
                raster, style = render_text_block(assets, w_px, h_px, rng)
                rec.update(kind="text", **style)
            else:
                spec = select_image(assets, w_px, h_px, rng)
                raster = crop_pixels(assets, spec)
                rec.update(kind="image", **spec.to_dict())
        except DLGDDError as exc:
            raise type(exc)(f"element {i}: {exc}") from None
        page[y0:y1, x0:x1] = raster
        mask[y0:y1, x0:x1] = e.cls.mask_code
        log.append(rec)
    return RenderedPage(page, mask, layout, log, None if seed is None else int(seed))


def decorate_batch(layouts, assets: AssetLibrary, page_size=(384, 512), seed_base: int = 0,
                   workers: int = 4) -> list[RenderedPage]:
    """Render pages on a thread pool; page ``i`` uses seed ``seed_base + i``; output order is preserved."""
    jobs = [(layout, seed_base + i) for i, layout in enumerate(layouts)]
    if workers <= 1 or len(jobs) <= 1:
        return [decorate(l, assets, page_size, s) for l, s in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: decorate(job[0], assets, page_size, job[1]), jobs))


def color_mask(mask: np.ndarray) -> np.ndarray:
    return MASK_COLORS[mask]


def boxes_from_mask(mask: np.ndarray) -> list[tuple[int, int, int, int, int]]:
    """Connected regions of each class as (code, x0, y0, x1, y1), sorted.

    Raises if a region does not fill its bounding rectangle.
    """
    from scipy import ndimage

    out = []
    for code in range(1, len(MASK_COLORS)):
        labels, n = ndimage.label(mask == code)
        for k, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            region = labels[sl] == k
            if not region.all():
                raise ValueError(f"class {code} region at {sl} is not rectangular")
            out.append((code, sl[1].start, sl[0].start, sl[1].stop, sl[0].stop))
    return sorted(out)


def layout_pixel_boxes(layout: PageLayout, page_size) -> list[tuple[int, int, int, int, int]]:
    W, H = page_size
    return sorted((e.cls.mask_code, *pixel_rect(e.x, e.y, e.w, e.h, W, H)) for e in layout.elements)
