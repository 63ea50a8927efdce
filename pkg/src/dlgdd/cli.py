"""Command-line entry point: ``dlgdd <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 data, 4 quota shortfall, 5 numeric failure.
Failures print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from .errors import DataError, DLGDDError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(args):
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.read(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _emit(record: dict):
    print(json.dumps(record, indent=1, sort_keys=True))


def _sidecar(out, command: str, seed, outputs):
    """``<out>.manifest.json``: what produced ``out`` plus checksums of the written files."""
    out = Path(out)
    files = [Path(p) for p in outputs]
    rec = {
        "command": command,
        "seed": seed,
        "outputs": {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files},
    }
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
    return rec


def _assets(cfg):
    from .ded import AssetLibrary

    return AssetLibrary.from_directory(cfg.asset_dir) if cfg.asset_dir else AssetLibrary.default()


def cmd_corpus_gen(args, cfg):
    from .layout import grammar_generate_corpus, write_layouts

    style = args.style or cfg.corpus_style
    count = args.count or cfg.corpus_size
    layouts = grammar_generate_corpus(style, count, cfg.seed)
    write_layouts(layouts, args.out)
    _sidecar(args.out, "corpus-gen", cfg.seed, [args.out])
    _emit({"layouts": len(layouts), "style": style, "out": str(args.out)})


def cmd_train_dlg(args, cfg):
    from .dlg import train_adversarial
    from .layout import read_layouts

    corpus = read_layouts(args.corpus)
    train_cfg = dataclasses.replace(cfg.dlg, seed=cfg.seed)
    if args.epochs is not None:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    gen, critic, report = train_adversarial(corpus, train_cfg, cfg.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "generator.npz", out / "critic.npz", out / "train_report.jsonl"]
    gen.save(paths[0])
    critic.save(paths[1])
    report.write(paths[2])
    _sidecar(out / "generator.npz", "train-dlg", cfg.seed, paths)
    last = report.epochs[-1].validity_rate if report.epochs else None
    _emit({"epochs": len(report.epochs), "final_validity": last, "out": str(out)})


def cmd_sample(args, cfg):
    from .dlg import GeneratorModel, sample_layouts
    from .layout import write_layouts

    gen = GeneratorModel.load(args.generator)
    layouts = sample_layouts(gen, args.count, seed=cfg.seed)
    write_layouts(layouts, args.out)
    _sidecar(args.out, "sample", cfg.seed, [args.out])
    _emit({"layouts": len(layouts), "out": str(args.out)})


def cmd_decorate(args, cfg):
    from .ded import decorate_batch, export_dataset
    from .layout import read_layouts

    layouts = read_layouts(args.layouts)
    if any(l.latent for l in layouts):
        raise UsageError(f"{args.layouts}: decorate needs decoded layouts")
    pages = decorate_batch(layouts, _assets(cfg), cfg.page_size, seed_base=cfg.seed, workers=cfg.workers)
    export_dataset(pages, args.out)
    _emit({"pages": len(pages), "out": str(args.out)})


def _dataset_pages(path):
    from .ded import load_manifest, read_page

    root = Path(path)
    manifest = load_manifest(root)
    return [rec["page"] for rec in manifest["pages"]], [read_page(root / rec["page"]) for rec in manifest["pages"]]


def cmd_train_dsd(args, cfg):
    from .dsd import load_page_images, read_corpus_file, train_dsd

    roles = read_corpus_file(args.corpus)
    pos_role = "target" if roles["target"] and not roles["positive"] else "positive"
    dsd_cfg = cfg.cross_dsd if args.mode == "cross" else cfg.quality_dsd
    dsd_cfg = dataclasses.replace(dsd_cfg, seed=cfg.seed)
    if args.epochs is not None:
        dsd_cfg = dataclasses.replace(dsd_cfg, epochs=args.epochs)
    enc = train_dsd(load_page_images(roles[pos_role]), load_page_images(roles["negative"]), dsd_cfg)
    enc.save(args.out)
    _sidecar(args.out, "train-dsd", cfg.seed, [args.out])
    _emit({"loss_curve": enc.loss_curve, "out": str(args.out)})


def _score(args, cfg, command, pos_role, tau):
    from .dsd import StyleCorpus, StyleEncoder, load_page_images, quality_filter, read_corpus_file, \
        write_score_reports

    enc = StyleEncoder.load(args.encoder)
    roles = read_corpus_file(args.corpus)
    if not roles[pos_role]:
        raise UsageError(f"{args.corpus}: no pages with role {pos_role!r}")
    corpus = StyleCorpus.from_pages(enc, load_page_images(roles[pos_role]), load_page_images(roles["negative"]),
                                    cfg.workers)
    names, pages = _dataset_pages(args.pages)
    tau = tau if args.tau is None else args.tau
    part = quality_filter(pages, enc, corpus, tau, cfg.k, cfg.workers)
    write_score_reports(part.reports, args.out, ids=names)
    _sidecar(args.out, command, cfg.seed, [args.out])
    _emit({"pages": len(pages), "accepted": len(part.accepted), "rate": part.rate, "defined": part.defined,
           "out": str(args.out)})


def cmd_filter(args, cfg):
    _score(args, cfg, "filter", "positive", cfg.tau_quality)


def cmd_select(args, cfg):
    _score(args, cfg, "select", "target", cfg.tau_cross)


def cmd_run(args, cfg):
    from .pipeline import run_pipeline

    manifest = run_pipeline(cfg, args.out)
    _emit({"selected": manifest.selected, "rounds": len(manifest.rounds), "quality_rate": manifest.quality_rate,
           "out": str(args.out)})


def cmd_metrics(args, cfg):
    from .ded import read_mask
    from .metrics import compute_metrics

    m = compute_metrics(read_mask(args.pred), read_mask(args.truth), args.n_classes)
    _emit(m.to_dict())


def cmd_verify(args, cfg):
    from .ded import verify_dataset

    problems = verify_dataset(args.dataset)
    _emit({"ok": not problems, "problems": problems})
    if problems:
        raise DataError(f"{args.dataset}: {len(problems)} files fail verification")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlgdd", description="Synthetic document layout dataset generator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON pipeline config (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the config's master seed")
        p.set_defaults(fn=fn)
        return p

    p = add("corpus-gen", cmd_corpus_gen, "write a grammar layout corpus")
    p.add_argument("--style")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True)

    p = add("train-dlg", cmd_train_dlg, "train the layout generator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True, help="output directory")

    p = add("sample", cmd_sample, "sample decoded layouts from a generator")
    p.add_argument("--generator", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("decorate", cmd_decorate, "render layouts into a dataset directory")
    p.add_argument("--layouts", required=True)
    p.add_argument("--out", required=True)

    p = add("train-dsd", cmd_train_dsd, "train a style encoder from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("quality", "cross"), default="quality")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)

    for name, fn, help in (("filter", cmd_filter, "quality-filter a dataset"),
                           ("select", cmd_select, "cross-domain select from a dataset")):
        p = add(name, fn, help)
        p.add_argument("--encoder", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--pages", required=True, help="dataset directory")
        p.add_argument("--tau", type=float)
        p.add_argument("--out", required=True, help="score report CSV")

    p = add("run", cmd_run, "full quota loop")
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "segmentation metrics between two mask PNGs")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--n-classes", type=int, default=4)

    p = add("verify", cmd_verify, "re-hash a dataset against its manifest")
    p.add_argument("dataset")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = _load_config(args)
        args.fn(args, cfg)
    except DLGDDError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return exc.exit_code
    except (OSError, MemoryError) as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
