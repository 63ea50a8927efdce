"""Document style discriminator: a contrastively trained page-style encoder.

Two uses share the same scoring rule. Quality assessment keeps generated pages
that sit closer to a positive style set than to a negative one; cross-domain
selection does the same with an unlabeled target dataset as the positive set.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .diffcore import (
    ParameterStore,
    Tensor,
    adam_step,
    clip_grad_norm,
    conv2d,
    init_affine,
    l2_normalize,
    linear,
    no_grad,
    relu,
    supcon_loss,
)
from .errors import DataError, NumericError, UsageError

log = logging.getLogger(__name__)

THUMB = 128
MIN_PAGE = 64
CHANNELS = (8, 16, 32)
LUMA = np.array([0.299, 0.587, 0.114])


def _raster(page) -> np.ndarray:
    return getattr(page, "page", page)


def preprocess(page) -> np.ndarray:
    """Grayscale, area-averaged 128x128 thumbnail in [0, 1], shape (1, 128, 128)."""
    arr = np.asarray(_raster(page))
    if arr.ndim not in (2, 3) or arr.shape[0] < MIN_PAGE or arr.shape[1] < MIN_PAGE:
        raise DataError(f"page raster {arr.shape} is smaller than {MIN_PAGE}x{MIN_PAGE}")
    gray = arr[..., :3].astype(np.float64) @ LUMA if arr.ndim == 3 else arr.astype(np.float64)
    thumb = Image.fromarray((gray / 255.0).astype(np.float32), "F").resize((THUMB, THUMB), Image.BOX)
    return np.clip(np.asarray(thumb, dtype=np.float64), 0.0, 1.0)[None]


@dataclass
class DSDConfig:
    epochs: int = 30
    batch: int = 32
    lr: float = 1e-3
    temperature: float = 0.1
    seed: int = 0
    embed_dim: int = 64
    clip_norm: float = 5.0
    min_per_class: int = 50


class StyleEncoder:
    """Three stride-2 conv stages (8, 16, 32 channels) + affine head; outputs are unit-norm."""

    def __init__(self, embed_dim: int = 64, seed: int = 0):
        self.embed_dim = embed_dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        self.store = ParameterStore()
        c_in = 1
        for i, c in enumerate(CHANNELS):
            fan_in = c_in * 9
            self.store.add(f"conv{i}.w", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c, c_in, 3, 3)))
            self.store.add(f"conv{i}.b", np.zeros(c))
            c_in = c
        side = THUMB // 2 ** len(CHANNELS)
        init_affine(self.store, "head", c_in * side * side, embed_dim, rng)
        self.loss_curve: list[float] = []

    def forward(self, thumbs) -> Tensor:
        x = thumbs if isinstance(thumbs, Tensor) else Tensor(thumbs)
        for i in range(len(CHANNELS)):
            x = relu(conv2d(x, self.store[f"conv{i}.w"], self.store[f"conv{i}.b"], stride=2, padding=1))
        x = x.reshape(x.shape[0], -1)
        return l2_normalize(linear(self.store, "head", x), axis=-1)

    def embed_thumbs(self, thumbs: np.ndarray, chunk: int = 64) -> np.ndarray:
        out = []
        with no_grad():
            for s in range(0, len(thumbs), chunk):
                out.append(self.forward(thumbs[s : s + chunk]).data)
        return np.concatenate(out) if out else np.zeros((0, self.embed_dim))

    def save(self, path):
        self.store.save(path, meta={"kind": "dsd-encoder", "embed_dim": self.embed_dim,
                                    "loss_curve": self.loss_curve})

    @classmethod
    def load(cls, path) -> "StyleEncoder":
        header, arrays = ParameterStore.read_checkpoint(path)
        meta = header.get("meta", {})
        if meta.get("kind") != "dsd-encoder":
            raise DataError(f"{path}: not a style encoder checkpoint")
        enc = cls(meta["embed_dim"])
        enc.store.load_arrays(arrays)
        enc.loss_curve = list(meta.get("loss_curve", []))
        return enc


def embed(encoder: StyleEncoder, page) -> np.ndarray:
    return encoder.embed_thumbs(preprocess(page)[None])[0]


def embed_pages(encoder: StyleEncoder, pages, workers: int = 1, chunk: int = 64) -> np.ndarray:
    """Embed many pages; chunks fan out over a thread pool, order preserved."""
    pages = list(pages)
    if not pages:
        return np.zeros((0, encoder.embed_dim))
    chunks = [pages[s : s + chunk] for s in range(0, len(pages), chunk)]

    def run(group):
        return encoder.embed_thumbs(np.stack([preprocess(p) for p in group]), chunk)

    if workers <= 1 or len(chunks) == 1:
        return np.concatenate([run(c) for c in chunks])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(run, chunks)))


def train_dsd(pos_pages, neg_pages, config: DSDConfig | None = None) -> StyleEncoder:
    """Two-class supervised contrastive training; each batch holds half positives, half negatives."""
    config = config or DSDConfig()
    for name, group in (("positive", pos_pages), ("negative", neg_pages)):
        if len(group) < config.min_per_class:
            raise DataError(f"{name} class has {len(group)} pages, need at least {config.min_per_class}")
    if config.batch < 4:
        raise UsageError("batch must be at least 4 so each class appears twice")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    encoder = StyleEncoder(config.embed_dim, seed=int(seeds[0].generate_state(1)[0]))
    if config.epochs <= 0:
        return encoder
    rng = np.random.default_rng(seeds[1])
    pos = np.stack([preprocess(p) for p in pos_pages])
    neg = np.stack([preprocess(p) for p in neg_pages])
    half = config.batch // 2
    steps = max(len(pos), len(neg)) // half
    for epoch in range(config.epochs):
        pi, ni = rng.permutation(len(pos)), rng.permutation(len(neg))
        losses = []
        try:
            for step in range(steps):
                a = pi[np.arange(step * half, (step + 1) * half) % len(pos)]
                b = ni[np.arange(step * half, (step + 1) * half) % len(neg)]
                x = np.concatenate([pos[a], neg[b]])
                labels = np.r_[np.ones(half, dtype=int), np.zeros(half, dtype=int)]
                loss = supcon_loss(encoder.forward(x), labels, config.temperature)
                encoder.store.zero_grad()
                loss.backward()
                clip_grad_norm(encoder.store, config.clip_norm)
                adam_step(encoder.store, config.lr)
                losses.append(loss.item())
        except NumericError as exc:
            raise NumericError(f"style encoder training diverged at epoch {epoch}: {exc}") from None
        encoder.loss_curve.append(float(np.mean(losses)))
        log.info("dsd epoch %d  loss %.4f", epoch, encoder.loss_curve[-1])
    return encoder


# --- scoring -------------------------------------------------------------------------------


def _as_rows(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.size == 0:
        return a.reshape(0, a.shape[-1] if a.ndim == 2 else 0)
    return a.reshape(len(a), -1)


@dataclass
class StyleCorpus:
    positives: np.ndarray
    negatives: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positives = _as_rows(self.positives)
        self.negatives = _as_rows(self.negatives)

    def check(self):
        if len(self.positives) == 0 or len(self.negatives) == 0:
            raise UsageError("style corpus needs both positive and negative embeddings")
        return self

    @classmethod
    def from_pages(cls, encoder: StyleEncoder, positives, negatives, workers: int = 1, **provenance):
        return cls(embed_pages(encoder, positives, workers), embed_pages(encoder, negatives, workers), provenance)


@dataclass
class ScoreReport:
    s_plus: float
    s_minus: float
    e_min: float
    margin: float
    accepted: bool


def set_similarity(e, S, k: int | None = None) -> float:
    """Mean cosine similarity between ``e`` and its ``k`` most similar members of ``S`` (default k = min(5, |S|))."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or len(S) == 0:
        raise UsageError("set_similarity needs a non-empty set of embeddings")
    e = np.asarray(e, dtype=np.float64)
    k = min(5, len(S)) if k is None else min(int(k), len(S))
    if k < 1:
        raise UsageError(f"k must be positive, got {k}")
    cos = (S @ e) / (np.linalg.norm(S, axis=1) * np.linalg.norm(e) + 1e-300)
    cos = np.clip(cos, -1.0, 1.0)
    return float(np.sort(cos)[::-1][:k].mean())


def assess_embedding(e, corpus: StyleCorpus, tau: float = 0.0, k: int | None = None) -> ScoreReport:
    corpus.check()
    s_plus = set_similarity(e, corpus.positives, k)
    s_minus = set_similarity(e, corpus.negatives, k)
    margin = s_plus - s_minus
    return ScoreReport(s_plus, s_minus, min(s_plus, s_minus), margin, bool(margin > tau))


def assess(page, encoder: StyleEncoder, corpus: StyleCorpus, tau: float = 0.0, k: int | None = None) -> ScoreReport:
    return assess_embedding(embed(encoder, page), corpus, tau, k)


@dataclass
class Partition:
    accepted: list
    rejected: list
    rate: float
    defined: bool
    reports: list[ScoreReport]

    def __iter__(self):
        return iter((self.accepted, self.rejected, self.rate))


def _partition(pages, embeddings, corpus, tau, k) -> Partition:
    reports = [assess_embedding(e, corpus, tau, k) for e in embeddings]
    accepted = [p for p, r in zip(pages, reports) if r.accepted]
    rejected = [p for p, r in zip(pages, reports) if not r.accepted]
    if not pages:
        return Partition([], [], 0.0, False, [])
    return Partition(accepted, rejected, len(accepted) / len(pages), True, reports)


def quality_filter(pages, encoder: StyleEncoder, corpus: StyleCorpus, tau: float = 0.0,
                   k: int | None = None, workers: int = 1) -> Partition:
    """Split pages into accepted / rejected, preserving order. An empty input reports rate 0, ``defined=False``."""
    pages = list(pages)
    corpus.check()
    return _partition(pages, embed_pages(encoder, pages, workers), corpus, tau, k)


def cross_domain_select(pages, encoder: StyleEncoder, target_pages, neg_pages, tau: float = 0.0,
                        k: int | None = None, workers: int = 1) -> Partition:
    """Keep the pages that look more like the unlabeled target set than like the negatives."""
    target_pages = list(target_pages)
    if not target_pages:
        raise UsageError("cross-domain selection needs a non-empty target set")
    corpus = StyleCorpus.from_pages(encoder, target_pages, neg_pages, workers, role="cross-domain")
    return quality_filter(pages, encoder, corpus, tau, k, workers)


# --- file interfaces -------------------------------------------------------------------------

ROLES = ("positive", "negative", "target")


def read_corpus_file(path) -> dict[str, list[Path]]:
    """Corpus file: JSON ``{"version": 1, "pages": [{"path": ..., "role": "positive|negative|target"}]}``.

    Relative paths resolve against the corpus file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from None
    out: dict[str, list[Path]] = {r: [] for r in ROLES}
    for i, rec in enumerate(doc.get("pages", [])):
        role = rec.get("role")
        if role not in ROLES or "path" not in rec:
            raise DataError(f"{path}: record {i} needs 'path' and a role in {ROLES}")
        p = Path(rec["path"])
        out[role].append(p if p.is_absolute() else path.parent / p)
    return out


def write_corpus_file(entries, path):
    """``entries``: iterable of (page path, role)."""
    recs = [{"path": str(p), "role": r} for p, r in entries]
    Path(path).write_text(json.dumps({"version": 1, "pages": recs}, indent=1) + "\n")


def load_page_images(paths) -> list[np.ndarray]:
    out = []
    for p in paths:
        try:
            out.append(np.asarray(Image.open(p).convert("RGB")))
        except OSError as exc:
            raise DataError(f"cannot read page image {p}: {exc}") from None
    return out


def write_score_reports(reports, path, ids=None):
    ids = list(range(len(reports))) if ids is None else list(ids)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "s_plus", "s_minus", "e_min", "margin", "accepted"])
        for i, r in zip(ids, reports):
            writer.writerow([i, f"{r.s_plus:.9g}", f"{r.s_minus:.9g}", f"{r.e_min:.9g}", f"{r.margin:.9g}",
                             int(r.accepted)])


def report_dicts(reports) -> list[dict]:
    return [asdict(r) for r in reports]
