"""Document layout generator: encode / relate / decode over a set of boxes, trained adversarially.

Generator: per-element MLP ``f`` -> transformer block(s) ``phi`` -> per-element MLP ``g``.
Geometry outputs are squashed onto the page (sigmoid, then shifted so that the box
ends inside the page); class outputs are logits. The critic scores whole layouts with
a mean-pooled set encoder, so it is permutation-invariant.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import (
    ParameterStore,
    Tensor,
    adam_step,
    as_tensor,
    bce_with_logits,
    clip_grad_norm,
    concat,
    init_attention_block,
    init_mlp,
    mlp,
    no_grad,
    relu,
    self_attention,
    sigmoid,
    softmax,
)
from .errors import BoundsError, DataError, NumericError, UsageError
from .layout import (
    N_MAX,
    ElementClass,
    LayoutElement,
    PageLayout,
    element_count_distribution,
    is_valid,
)

log = logging.getLogger(__name__)

N_CLASSES = len(ElementClass)
IN_DIM = N_CLASSES + 4


@dataclass
class DLGConfig:
    dim: int = 64
    heads: int = 4
    hidden: int = 128
    blocks: int = 1
    min_w: float = 0.04
    min_h: float = 0.04
    n_max: int = N_MAX


@dataclass
class TrainConfig:
    epochs: int = 120
    batch: int = 64
    lr: float = 1e-4
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    clip_norm: float = 5.0
    eval_samples: int = 128
    overlap_threshold: float = 0.5
    overlap_weight: float = 60.0
    class_noise: float = 0.1
    geometry_noise: float = 0.005
    ema_decay: float = 0.99  # weight average used for sampling; 0 samples from the raw weights
    feature_weight: float = 1.0  # match batch-mean critic features of real and generated layouts
    overlap_margin: float = 0.0  # IoU below this is not penalized


@dataclass
class EpochRecord:
    epoch: int
    generator_loss: float
    critic_loss: float
    validity_rate: float


@dataclass
class TrainReport:
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"seed": self.seed, **asdict(r)}) + "\n" for r in self.epochs)

    def write(self, path):
        Path(path).write_text(self.to_jsonl())


class GeneratorModel:
    def __init__(self, config: DLGConfig | None = None, seed: int = 0, n_dist=None):
        self.config = config = config or DLGConfig()
        if config.dim % config.heads:
            raise UsageError(f"dim={config.dim} not divisible by heads={config.heads}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.store = ParameterStore()
        init_mlp(self.store, "f", [IN_DIM, config.hidden, config.dim], rng)
        for b in range(config.blocks):
            init_attention_block(self.store, f"phi.{b}", config.dim, config.hidden, rng)
        init_mlp(self.store, "g", [config.dim, config.hidden, IN_DIM], rng)
        if n_dist is None:
            n_dist = np.zeros(config.n_max + 1)
            n_dist[1:] = 1.0 / config.n_max
        self.n_dist = np.asarray(n_dist, dtype=np.float64)

    def encode(self, x) -> Tensor:
        return mlp(self.store, "f", x, 2)

    def forward(self, classes_onehot, geometry, pad_mask=None):
        """(B, N, 3) + (B, N, 4) latents -> class logits (B, N, 3), on-page geometry (B, N, 4)."""
        e = self.encode(concat([Tensor(classes_onehot), Tensor(geometry)], axis=-1))
        for b in range(self.config.blocks):
            e = self_attention(e, self.store, f"phi.{b}", self.config.heads, pad_mask)
        out = mlp(self.store, "g", e, 2)
        logits = out[..., :N_CLASSES]
        s = sigmoid(out[..., N_CLASSES:])
        x, y = s[..., 0:1], s[..., 1:2]
        w = self.config.min_w + (1.0 - self.config.min_w) * s[..., 2:3]
        h = self.config.min_h + (1.0 - self.config.min_h) * s[..., 3:4]
        x = x - relu(x + w - 1.0)
        y = y - relu(y + h - 1.0)
        return logits, concat([x, y, w, h], axis=-1)

    def save(self, path):
        self.store.save(
            path, meta={"kind": "dlg-generator", "config": asdict(self.config), "n_dist": self.n_dist.tolist()}
        )

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        header, arrays = ParameterStore.read_checkpoint(path)
        meta = header.get("meta", {})
        if meta.get("kind") != "dlg-generator":
            raise DataError(f"{path}: not a generator checkpoint")
        model = cls(DLGConfig(**meta["config"]), n_dist=meta["n_dist"])
        model.store.load_arrays(arrays)
        return model


class CriticModel:
    def __init__(self, config: DLGConfig | None = None, seed: int = 0):
        self.config = config = config or DLGConfig()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        self.store = ParameterStore()
        init_mlp(self.store, "enc", [IN_DIM, config.hidden, config.dim], rng)
        for b in range(config.blocks):
            init_attention_block(self.store, f"att.{b}", config.dim, config.hidden, rng)
        init_mlp(self.store, "head", [config.dim, config.hidden, 1], rng)

    def forward(self, class_probs, geometry, pad_mask=None) -> Tensor:
        """(B, N, 3) class probabilities + (B, N, 4) geometry -> (B,) logits."""
        e = self.encode(concat([class_probs, geometry], axis=-1), pad_mask)
        return mlp(self.store, "head", e, 2).reshape(-1)

    def encode(self, x, pad_mask=None) -> Tensor:
        B, N = x.shape[:2]
        keep = np.ones((B, N, 1)) if pad_mask is None else (~np.asarray(pad_mask))[..., None] * 1.0
        e = mlp(self.store, "enc", x, 2)
        for b in range(self.config.blocks):
            e = self_attention(e, self.store, f"att.{b}", self.config.heads, pad_mask)
        return (e * keep).sum(axis=1) / keep.sum(axis=1)

    def save(self, path):
        self.store.save(path, meta={"kind": "dlg-critic", "config": asdict(self.config)})

    @classmethod
    def load(cls, path) -> "CriticModel":
        header, arrays = ParameterStore.read_checkpoint(path)
        meta = header.get("meta", {})
        if meta.get("kind") != "dlg-critic":
            raise DataError(f"{path}: not a critic checkpoint")
        model = cls(DLGConfig(**meta["config"]))
        model.store.load_arrays(arrays)
        return model


def overlap_penalty(geometry, pad_mask, margin: float = 0.0) -> Tensor:
    """Mean over layouts of the summed pairwise IoU of unpadded boxes; ``margin`` > 0 sums ``relu(IoU - margin)``."""
    keep = ~np.asarray(pad_mask)
    # padded slots become empty boxes at the origin so their min/max kinks stay put
    geometry = as_tensor(geometry) * keep[..., None].astype(np.float64)
    x, y, w, h = (geometry[..., k : k + 1] for k in range(4))
    r, b = x + w, y + h

    def pair_min(a):
        return a - relu(a - a.transpose(0, 2, 1))

    def pair_max(a):
        at = a.transpose(0, 2, 1)
        return at + relu(a - at)

    inter = relu(pair_min(r) - pair_max(x)) * relu(pair_min(b) - pair_max(y))
    area = w * h
    union = area + area.transpose(0, 2, 1) - inter
    n = keep.shape[1]
    pair = (keep[:, :, None] & keep[:, None, :] & ~np.eye(n, dtype=bool)[None]).astype(np.float64)
    # padded pairs may have zero union; they are masked out anyway
    overlap = inter / (union + (1.0 - pair))
    if margin:
        overlap = relu(overlap - margin)
    return (overlap * pair).sum() * (0.5 / keep.shape[0])


# --- array packing -----------------------------------------------------------------


def pack_layouts(layouts, n_pad: int | None = None):
    """Pad layouts into (one-hot classes, geometry, pad mask) arrays."""
    n_pad = n_pad or max((len(l) for l in layouts), default=1) or 1
    B = len(layouts)
    onehot = np.zeros((B, n_pad, N_CLASSES))
    geom = np.zeros((B, n_pad, 4))
    pad = np.ones((B, n_pad), dtype=bool)
    for i, layout in enumerate(layouts):
        n = len(layout)
        if n > n_pad:
            raise BoundsError(f"layout with {n} elements exceeds pad size {n_pad}")
        if n:
            onehot[i, np.arange(n), layout.classes()] = 1.0
            geom[i, :n] = layout.geometry()
            pad[i, :n] = False
    return onehot, geom, pad


def _sample_latents(rng, counts, n_pad):
    B = len(counts)
    classes = rng.integers(0, N_CLASSES, size=(B, n_pad))
    onehot = np.eye(N_CLASSES)[classes]
    geom = rng.standard_normal((B, n_pad, 4))
    pad = np.arange(n_pad)[None, :] >= np.asarray(counts)[:, None]
    onehot[pad] = 0.0
    geom[pad] = 0.0
    return onehot, geom, pad


def _decode(logits: np.ndarray, geom: np.ndarray, pad: np.ndarray) -> list[PageLayout]:
    geom = geom.copy()
    for a, b in ((0, 2), (1, 3)):
        lo = np.minimum(geom[..., a], 1.0 - geom[..., b])
        # round-off can leave lo + size a hair above 1
        for _ in range(4):
            over = lo + geom[..., b] > 1.0
            if not over.any():
                break
            lo[over] = np.nextafter(lo[over], 0.0)
        geom[..., a] = np.maximum(lo, 0.0)
    classes = logits.argmax(axis=-1)
    out = []
    for i in range(len(geom)):
        keep = ~pad[i]
        out.append(PageLayout.from_arrays(classes[i][keep], geom[i][keep]))
    return out


# --- public operations ---------------------------------------------------------------


def element_encode(v: LayoutElement, model: GeneratorModel) -> Tensor:
    x = np.zeros(IN_DIM)
    x[int(v.cls)] = 1.0
    x[N_CLASSES:] = v.geometry()
    with no_grad():
        return model.encode(Tensor(x[None, :])).reshape(-1)


def generator_forward(latent: PageLayout, model: GeneratorModel) -> PageLayout:
    if len(latent) > model.config.n_max:
        raise BoundsError(f"layout has {len(latent)} elements, limit is {model.config.n_max}")
    if len(latent) == 0:
        return PageLayout()
    onehot, geom, pad = pack_layouts([latent])
    with no_grad():
        logits, g = model.forward(onehot, geom, pad)
    return _decode(logits.data, g.data, pad)[0]


def critic_forward(layout: PageLayout, model: CriticModel) -> float:
    if layout.latent:
        raise UsageError("critic_forward needs a decoded layout")
    return float(critic_scores([layout], model)[0])


def critic_scores(layouts, model: CriticModel) -> np.ndarray:
    if not layouts:
        return np.zeros(0)
    onehot, geom, pad = pack_layouts(layouts)
    with no_grad():
        return model.forward(Tensor(onehot), Tensor(geom), pad).data.copy()


def sample_layouts(model: GeneratorModel, count: int, n_dist=None, seed: int = 0, chunk: int = 256):
    """Decode ``count`` layouts; element counts drawn from ``n_dist`` (default: the model's corpus distribution)."""
    if count <= 0:
        return []
    n_dist = model.n_dist if n_dist is None else np.asarray(n_dist, dtype=np.float64)
    rng = np.random.default_rng(seed)
    counts = rng.choice(len(n_dist), size=count, p=n_dist / n_dist.sum())
    counts = np.clip(counts, 1, model.config.n_max)
    out = []
    for start in range(0, count, chunk):
        c = counts[start : start + chunk]
        n_pad = int(c.max())
        onehot, geom, pad = _sample_latents(rng, c, n_pad)
        with no_grad():
            logits, g = model.forward(onehot, geom, pad)
        out.extend(_decode(logits.data, g.data, pad))
    return out


def validity_rate(layouts, overlap_threshold: float = 0.5) -> float:
    if not layouts:
        return 0.0
    return sum(is_valid(l, overlap_threshold) for l in layouts) / len(layouts)


def critic_loss(critic: CriticModel, real, real_pad, fake, fake_pad) -> Tensor:
    """Logistic loss: real layouts labelled 1, generated layouts 0. ``real``/``fake`` are (classes, geometry)."""
    d_real = critic.forward(*real, real_pad)
    d_fake = critic.forward(*fake, fake_pad)
    return bce_with_logits(d_real, 1.0) + bce_with_logits(d_fake, 0.0)


def generator_loss(gen: GeneratorModel, critic: CriticModel, latents, overlap_weight: float = 0.0,
                   noise=(0.0, 0.0), feature_weight: float = 0.0, real_features=None,
                   overlap_margin: float = 0.0) -> Tensor:
    """Non-saturating generator loss plus optional overlap and feature-matching terms.

    The critic sees softmax class probabilities so class logits receive gradient;
    ``noise`` is added to the critic's (class, geometry) inputs. ``real_features`` is
    the batch mean of the critic's pooled features on real layouts.
    """
    onehot, geom_in, pad = latents
    logits, geom = gen.forward(onehot, geom_in, pad)
    x = concat([softmax(logits, axis=-1) + noise[0], geom + noise[1]], axis=-1)
    feats = critic.encode(x, pad)
    loss = bce_with_logits(mlp(critic.store, "head", feats, 2).reshape(-1), 1.0)
    if overlap_weight:
        loss = loss + overlap_weight * overlap_penalty(geom, pad, overlap_margin)
    if feature_weight:
        diff = feats.mean(axis=0) - real_features
        loss = loss + feature_weight * (diff * diff).sum()
    return loss


def train_adversarial(corpus, config: TrainConfig | None = None, model_config: DLGConfig | None = None,
                      min_corpus: int = 200):
    """Alternate one critic and one generator step per batch under the non-saturating logistic loss."""
    config = config or TrainConfig()
    model_config = model_config or DLGConfig()
    if len(corpus) < min_corpus:
        raise DataError(f"corpus has {len(corpus)} layouts, need at least {min_corpus}")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    gen = GeneratorModel(model_config, seed=int(seeds[0].generate_state(1)[0]),
                         n_dist=element_count_distribution(corpus))
    critic = CriticModel(model_config, seed=int(seeds[1].generate_state(1)[0]))
    rng = np.random.default_rng(seeds[2])
    report = TrainReport(seed=config.seed)
    if config.epochs <= 0:
        return gen, critic, report

    n_pad = max(len(l) for l in corpus)
    real_onehot, real_geom, real_pad = pack_layouts(corpus, n_pad)
    n_dist = gen.n_dist
    shadow = None
    if config.ema_decay:
        shadow = GeneratorModel(model_config, n_dist=n_dist)
        shadow.store.load_arrays(gen.store.state_arrays())

    def noisy(classes, geometry):
        # instance noise keeps the critic from keying on exact one-hot rows
        shape = (len(idx), n_pad)
        cn = rng.normal(0.0, config.class_noise, size=(*shape, N_CLASSES)) if config.class_noise else 0.0
        gn = rng.normal(0.0, config.geometry_noise, size=(*shape, 4)) if config.geometry_noise else 0.0
        return classes + cn, geometry + gn

    for epoch in range(config.epochs):
        order = rng.permutation(len(corpus))
        g_losses, c_losses = [], []
        try:
            for start in range(0, len(order) - config.batch + 1, config.batch):
                idx = order[start : start + config.batch]
                B = len(idx)
                # critic step
                counts = rng.choice(len(n_dist), size=B, p=n_dist)
                z = _sample_latents(rng, counts, n_pad)
                with no_grad():
                    logits, geom = gen.forward(*z)
                fake_probs = softmax(logits.data, axis=-1)
                c_loss = critic_loss(critic, noisy(real_onehot[idx], real_geom[idx]), real_pad[idx],
                                     noisy(fake_probs, geom.data), z[2])
                critic.store.zero_grad()
                c_loss.backward()
                clip_grad_norm(critic.store, config.clip_norm)
                adam_step(critic.store, config.lr, config.beta1, config.beta2)
                # generator step
                counts = rng.choice(len(n_dist), size=B, p=n_dist)
                z = _sample_latents(rng, counts, n_pad)
                real_feats = None
                if config.feature_weight:
                    with no_grad():
                        rc, rg = noisy(real_onehot[idx], real_geom[idx])
                        real_feats = critic.encode(concat([Tensor(rc), Tensor(rg)], axis=-1),
                                                   real_pad[idx]).data.mean(axis=0)
                g_loss = generator_loss(gen, critic, z, config.overlap_weight, noisy(0.0, 0.0),
                                        config.feature_weight, real_feats, config.overlap_margin)
                gen.store.zero_grad()
                g_loss.backward()
                critic.store.zero_grad()
                clip_grad_norm(gen.store, config.clip_norm)
                adam_step(gen.store, config.lr, config.beta1, config.beta2)
                if shadow is not None:
                    d = config.ema_decay
                    for name, t in gen.store.items():
                        sd = shadow.store[name].data
                        sd *= d
                        sd += (1.0 - d) * t.data
                g_losses.append(g_loss.item())
                c_losses.append(c_loss.item())
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from None
        samples = sample_layouts(shadow or gen, config.eval_samples, seed=config.seed + epoch)
        rec = EpochRecord(
            epoch=epoch,
            generator_loss=float(np.mean(g_losses)) if g_losses else float("nan"),
            critic_loss=float(np.mean(c_losses)) if c_losses else float("nan"),
            validity_rate=validity_rate(samples, config.overlap_threshold),
        )
        if not (np.isfinite(rec.generator_loss) and np.isfinite(rec.critic_loss)):
            raise NumericError(f"training diverged at epoch {epoch}: non-finite loss")
        report.epochs.append(rec)
        log.info("epoch %d  G %.4f  D %.4f  valid %.3f", epoch, rec.generator_loss, rec.critic_loss,
                 rec.validity_rate)
    return shadow or gen, critic, report
