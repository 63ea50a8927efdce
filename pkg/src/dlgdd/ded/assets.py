"""Candidate pictures, fonts, prose and text colours used to decorate layouts."""
from __future__ import annotations

import functools
import json
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image, ImageFont

from ..errors import ConfigError

MIN_IMAGES = 20
MIN_FONTS = 2
MIN_CORPUS_CHARS = 10_000
MIN_CONTRAST = 3.0


def relative_luminance(rgb) -> float:
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    return float(lin @ np.array([0.2126, 0.7152, 0.0722]))


def contrast_with_white(rgb) -> float:
    return 1.05 / (relative_luminance(rgb) + 0.05)


def split_sentences(text: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", " ".join(text.split()))
    return [p for p in parts if p]


_font_cache = threading.local()


def load_font(path: str, size: int) -> ImageFont.FreeTypeFont:
    # FreeType faces are not shared between threads
    cache = getattr(_font_cache, "fonts", None)
    if cache is None:
        cache = _font_cache.fonts = {}
    key = (path, size)
    if key not in cache:
        cache[key] = ImageFont.truetype(path, size)
    return cache[key]


@dataclass
class AssetLibrary:
    images: list[np.ndarray]
    fonts: list[str]
    text: str
    palette: list[tuple[int, int, int]]
    sentences: list[str] = field(init=False)
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sentences = split_sentences(self.text)
        self.sizes = np.array([(im.shape[1], im.shape[0]) for im in self.images], dtype=np.int64).reshape(-1, 2)

    def validate(self) -> "AssetLibrary":
        if not self.images:
            raise ConfigError("asset library has no images")
        if len(self.images) < MIN_IMAGES:
            raise ConfigError(f"asset library has {len(self.images)} images, need {MIN_IMAGES}")
        if len(self.fonts) < MIN_FONTS:
            raise ConfigError(f"asset library has {len(self.fonts)} fonts, need {MIN_FONTS}")
        if len(self.text) < MIN_CORPUS_CHARS:
            raise ConfigError(f"text corpus has {len(self.text)} characters, need {MIN_CORPUS_CHARS}")
        if not self.palette:
            raise ConfigError("empty text palette")
        for rgb in self.palette:
            if contrast_with_white(rgb) < MIN_CONTRAST:
                raise ConfigError(f"palette colour {tuple(rgb)} has contrast < {MIN_CONTRAST}:1 on white")
        for f in self.fonts:
            try:
                load_font(f, 12)
            except OSError as exc:
                raise ConfigError(f"cannot load font {f}: {exc}") from None
        return self

    @classmethod
    def from_directory(cls, path) -> "AssetLibrary":
        """Load ``images/*.png|jpg``, ``fonts/*.ttf|otf``, ``corpus.txt`` and ``palette.json``.

        When ``images/`` is absent the procedural picture set is used.
        """
        path = Path(path)
        if not path.is_dir():
            raise ConfigError(f"asset directory {path} does not exist")
        img_dir = path / "images"
        if img_dir.is_dir():
            files = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
            images = [np.asarray(Image.open(p).convert("RGB")) for p in files]
        else:
            images = procedural_images()
        fonts = sorted(str(p) for p in (path / "fonts").glob("*") if p.suffix.lower() in (".ttf", ".otf"))
        try:
            text = (path / "corpus.txt").read_text()
            palette = [tuple(int(v) for v in c) for c in json.loads((path / "palette.json").read_text())["colors"]]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"asset directory {path}: {exc}") from None
        return cls(images, fonts, text, palette).validate()

    @classmethod
    def default(cls) -> "AssetLibrary":
        return _default_library()

    def write_directory(self, path):
        path = Path(path)
        (path / "images").mkdir(parents=True, exist_ok=True)
        (path / "fonts").mkdir(exist_ok=True)
        for i, im in enumerate(self.images):
            Image.fromarray(im).save(path / "images" / f"img_{i:04d}.png")
        for f in self.fonts:
            (path / "fonts" / Path(f).name).write_bytes(Path(f).read_bytes())
        (path / "corpus.txt").write_text(self.text)
        (path / "palette.json").write_text(json.dumps({"colors": [list(c) for c in self.palette]}))


def bundled_asset_dir() -> Path:
    return Path(str(resources.files("dlgdd") / "assets"))


@functools.lru_cache(maxsize=1)
def _default_library() -> AssetLibrary:
    return AssetLibrary.from_directory(bundled_asset_dir())


# --- procedural pictures ----------------------------------------------------------------

# Width steps of 1.4 and height steps of 1.8 (each jittered by at most 3%) stay
# under the 1.5x / 2x acceptance bands, so every paste area up to roughly
# 1000 x 1400 px has at least one eligible picture.
WIDTH_STEP, HEIGHT_STEP, JITTER = 1.4, 1.8, 0.03


def _picture(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u, v = xx / max(w - 1, 1), yy / max(h - 1, 1)
    c0, c1 = rng.uniform(30, 225, size=(2, 3))
    angle = rng.uniform(0, np.pi)
    t = (np.cos(angle) * u + np.sin(angle) * v)
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    img = c0 + (c1 - c0) * t[..., None]
    for _ in range(int(rng.integers(2, 7))):
        cx, cy = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.4)
        col = rng.uniform(0, 255, 3)
        if rng.random() < 0.5:
            inside = (u - cx) ** 2 + ((v - cy) * h / max(w, 1)) ** 2 < r * r
        else:
            inside = (np.abs(u - cx) < r) & (np.abs(v - cy) < r * rng.uniform(0.3, 1.5))
        img[inside] = 0.35 * img[inside] + 0.65 * col
    return np.clip(img, 0, 255).astype(np.uint8)


@functools.lru_cache(maxsize=1)
def _procedural_images(seed: int, max_w: int, max_h: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(seed)
    widths, w = [], 8.0
    while w <= max_w * WIDTH_STEP:
        widths.append(w)
        w *= WIDTH_STEP
    heights, h = [], 8.0
    while h <= max_h * HEIGHT_STEP:
        heights.append(h)
        h *= HEIGHT_STEP
    out = []
    for bw in widths:
        for bh in heights:
            W = int(round(bw * rng.uniform(1.0 - JITTER, 1.0 + JITTER)))
            H = int(round(bh * rng.uniform(1.0 - JITTER, 1.0 + JITTER)))
            out.append(_picture(rng, max(W, 8), max(H, 8)))
    return tuple(out)


def procedural_images(seed: int = 2017, max_w: int = 800, max_h: int = 800) -> list[np.ndarray]:
    """Deterministic gradient-and-shapes pictures on a geometric size grid."""
    return list(_procedural_images(seed, max_w, max_h))
