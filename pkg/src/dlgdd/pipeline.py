"""Quota loop: sample layouts, render them, keep the good ones, keep the on-target ones, repeat.

Outputs of ``run_pipeline(config, out_dir)``::

    dataset/            selected pages in the dataset layout of ``ded.export``
    models/             generator, critic and both style encoders
    run_manifest.json   config, stage seeds, per-round counts, checksums
    timing.json         wall-clock per stage (kept apart so manifests stay byte-identical)
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ded import AssetLibrary, decorate_batch, export_dataset
from .ded.render import MIN_IMAGE_BOX, MIN_TEXT_BOX
from .dlg import DLGConfig, GeneratorModel, TrainConfig, sample_layouts, train_adversarial
from .dsd import DSDConfig, StyleCorpus, StyleEncoder, embed_pages, quality_filter, train_dsd
from .errors import ConfigError, QuotaShortfallError
from .layout import GRAMMAR_STYLES, PageLayout, grammar_generate_corpus, uniform_random_layout

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
MANIFEST_VERSION = 1
STAGES = ("corpus", "dlg", "quality_pos", "quality_neg", "target", "cross_neg", "dsd_quality", "dsd_cross",
          "rounds")


@dataclass
class PipelineConfig:
    """Every knob of a run. Stored as JSON with a ``version`` key; nested sections mirror the dataclasses."""

    corpus_style: str = "academic"
    corpus_size: int = 2000
    dlg: TrainConfig = field(default_factory=TrainConfig)
    model: DLGConfig = field(default_factory=DLGConfig)
    generator_checkpoint: str | None = None  # skip DLG training when set
    asset_dir: str | None = None  # None: bundled assets
    page_size: tuple[int, int] = (384, 512)
    dsd_pages: int = 200  # rendered pages per side for each style encoder
    quality_dsd: DSDConfig = field(default_factory=DSDConfig)
    cross_dsd: DSDConfig = field(default_factory=DSDConfig)
    target_style: str = "academic"
    negative_style: str = "magazine"
    tau_quality: float = 0.0
    tau_cross: float = 0.0
    k: int = 5
    batch_size: int = 200
    quota: int = 300
    round_cap: int = 50
    workers: int = 4
    seed: int = 0

    def validate(self):
        if self.quota < 1:
            raise ConfigError(f"quota must be at least 1, got {self.quota}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.round_cap < 1:
            raise ConfigError(f"round_cap must be at least 1, got {self.round_cap}")
        for key in ("corpus_style", "target_style", "negative_style"):
            if getattr(self, key) not in GRAMMAR_STYLES:
                raise ConfigError(f"{key}={getattr(self, key)!r} not one of {GRAMMAR_STYLES}")
        W, H = self.page_size
        if self.model.min_h * H < MIN_TEXT_BOX + 1:
            raise ConfigError(f"model.min_h * page height = {self.model.min_h * H:.1f} px leaves text boxes "
                              f"below {MIN_TEXT_BOX} px")
        if self.model.min_w * W < MIN_IMAGE_BOX + 1:
            raise ConfigError(f"model.min_w * page width = {self.model.min_w * W:.1f} px leaves picture boxes "
                              f"below {MIN_IMAGE_BOX} px")
        for key in ("asset_dir", "generator_checkpoint"):
            path = getattr(self, key)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key} path does not exist: {path}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["page_size"] = list(self.page_size)
        return {"version": CONFIG_VERSION, **d}

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "version" not in d:
            raise ConfigError("config is missing key 'version'")
        if d.pop("version") != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version; expected {CONFIG_VERSION}")
        nested = {"dlg": TrainConfig, "model": DLGConfig, "quality_dsd": DSDConfig, "cross_dsd": DSDConfig}
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            if key in nested:
                value = _section(nested[key], key, value)
            elif key == "page_size":
                value = tuple(int(v) for v in value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def read(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError:
            raise ConfigError(f"cannot read config file {path}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(d)


def _section(kind, name, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(kind)}
    for key in value:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}")
    return kind(**value)


def stage_seeds(master: int) -> dict[str, int]:
    """Independent per-stage seeds spawned from the master seed."""
    children = np.random.SeedSequence(master).spawn(len(STAGES))
    return {name: int(c.generate_state(1, dtype=np.uint32)[0]) for name, c in zip(STAGES, children)}


@dataclass
class RoundRecord:
    round: int
    seed: int
    generated: int
    decorated: int
    accepted_quality: int
    accepted_cross: int
    cumulative_generated: int
    cumulative_quality: int
    cumulative_cross: int


@dataclass
class RunManifest:
    config: dict
    seeds: dict
    rounds: list[RoundRecord] = field(default_factory=list)
    quota_met: bool = False
    checksums: dict = field(default_factory=dict)

    @property
    def selected(self) -> int:
        return self.rounds[-1].cumulative_cross if self.rounds else 0

    @property
    def quality_rate(self) -> float:
        gen = self.rounds[-1].cumulative_generated if self.rounds else 0
        return self.rounds[-1].cumulative_quality / gen if gen else 0.0

    def to_dict(self) -> dict:
        totals = {"generated": 0, "accepted_quality": 0, "accepted_cross": 0}
        if self.rounds:
            last = self.rounds[-1]
            totals = {"generated": last.cumulative_generated, "accepted_quality": last.cumulative_quality,
                      "accepted_cross": last.cumulative_cross}
        return {
            "format": "dlgdd-run",
            "version": MANIFEST_VERSION,
            "config": self.config,
            "seeds": self.seeds,
            "rounds": [asdict(r) for r in self.rounds],
            "totals": totals,
            "quota_met": self.quota_met,
            "checksums": self.checksums,
        }

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def overlap_heavy_layouts(count: int, seed: int, min_size: float = 0.04) -> list[PageLayout]:
    """Uniform-corner boxes: large, crowded and overlapping, the negative style for quality mode."""
    rng = np.random.default_rng(seed)
    return [uniform_random_layout(int(rng.integers(4, 9)), rng, min_size) for _ in range(count)]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_pipeline(config: PipelineConfig, out_dir) -> RunManifest:
    config.validate()
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    seeds = stage_seeds(config.seed)
    assets = AssetLibrary.from_directory(config.asset_dir) if config.asset_dir else AssetLibrary.default()
    timing: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        timing[name] = round(now - clock, 3)
        clock = now

    def render(layouts, seed):
        return decorate_batch(layouts, assets, config.page_size, seed_base=seed, workers=config.workers)

    # generator
    if config.generator_checkpoint:
        gen = GeneratorModel.load(config.generator_checkpoint)
    else:
        corpus = grammar_generate_corpus(config.corpus_style, config.corpus_size, seeds["corpus"])
        train_cfg = dataclasses.replace(config.dlg, seed=seeds["dlg"])
        gen, critic, report = train_adversarial(corpus, train_cfg, config.model)
        critic.save(out / "models" / "critic.npz")
        report.write(out / "models" / "dlg_report.jsonl")
    gen.save(out / "models" / "generator.npz")
    lap("dlg")

    # quality-mode encoder: clean grammar pages vs crowded overlapping pages
    n = config.dsd_pages
    half = n // 2
    clean = (grammar_generate_corpus("academic", n - half, seeds["quality_pos"])
             + grammar_generate_corpus("magazine", half, seeds["quality_pos"]))
    q_pos = render(clean, seeds["quality_pos"])
    q_neg = render(overlap_heavy_layouts(n, seeds["quality_neg"], config.model.min_h), seeds["quality_neg"])
    q_enc = train_dsd(q_pos, q_neg, dataclasses.replace(config.quality_dsd, seed=seeds["dsd_quality"]))
    q_enc.save(out / "models" / "dsd_quality.npz")
    q_corpus = StyleCorpus.from_pages(q_enc, q_pos, q_neg, config.workers, role="quality")
    lap("dsd_quality")

    # cross-domain encoder: unlabeled target-style pages vs the negative style
    target = render(grammar_generate_corpus(config.target_style, n, seeds["target"]), seeds["target"])
    c_neg = render(grammar_generate_corpus(config.negative_style, n, seeds["cross_neg"]), seeds["cross_neg"])
    c_enc = train_dsd(target, c_neg, dataclasses.replace(config.cross_dsd, seed=seeds["dsd_cross"]))
    c_enc.save(out / "models" / "dsd_cross.npz")
    c_corpus = StyleCorpus.from_pages(c_enc, target, c_neg, config.workers, role="cross-domain")
    lap("dsd_cross")

    manifest = RunManifest(config=config.to_dict(), seeds=seeds)
    round_seeds = np.random.SeedSequence(seeds["rounds"]).spawn(config.round_cap)
    selected = []
    totals = np.zeros(3, dtype=int)
    for r in range(config.round_cap):
        seed = int(round_seeds[r].generate_state(1, dtype=np.uint32)[0])
        layouts = sample_layouts(gen, config.batch_size, seed=seed)
        pages = render(layouts, seed)
        quality = quality_filter(pages, q_enc, q_corpus, config.tau_quality, config.k, config.workers)
        cross = quality_filter(quality.accepted, c_enc, c_corpus, config.tau_cross, config.k, config.workers)
        selected.extend(cross.accepted)
        totals += (len(layouts), len(quality.accepted), len(cross.accepted))
        manifest.rounds.append(RoundRecord(r, seed, len(layouts), len(pages), len(quality.accepted),
                                           len(cross.accepted), *(int(t) for t in totals)))
        log.info("round %d: generated %d, quality %d, selected %d (total %d / %d)", r, len(layouts),
                 len(quality.accepted), len(cross.accepted), totals[2], config.quota)
        if totals[2] >= config.quota:
            manifest.quota_met = True
            break
    lap("rounds")

    export_dataset(selected, out / "dataset")
    manifest.checksums = {
        "dataset_manifest": _file_digest(out / "dataset" / "manifest.json"),
        **{f"models/{p.name}": _file_digest(p) for p in sorted((out / "models").glob("*.npz"))},
    }
    lap("export")
    manifest.write(out / "run_manifest.json")
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    if not manifest.quota_met:
        raise QuotaShortfallError(
            f"selected {manifest.selected} of quota {config.quota} after {config.round_cap} rounds", manifest)
    return manifest
