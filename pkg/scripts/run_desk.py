"""Run the full generate / quality-filter / target-select loop at desk scale.

Optionally reuses a trained generator checkpoint and overrides a few knobs from
the command line; everything else comes from the config file or the defaults.
"""
import argparse
import json
import logging
from pathlib import Path

from dlgdd.errors import QuotaShortfallError
from dlgdd.pipeline import PipelineConfig, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, help="pipeline config JSON")
    ap.add_argument("--generator", help="trained generator checkpoint (skips DLG training)")
    ap.add_argument("--quota", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = PipelineConfig.read(args.config) if args.config else PipelineConfig()
    if args.generator:
        cfg.generator_checkpoint = args.generator
    if args.quota is not None:
        cfg.quota = args.quota
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        manifest = run_pipeline(cfg, args.out)
    except QuotaShortfallError as exc:
        print(f"quota not met: {exc}")
        manifest = exc.manifest
    timing = json.loads((args.out / "timing.json").read_text())
    print(json.dumps({"rounds": len(manifest.rounds), "selected": manifest.selected,
                      "quality_rate": round(manifest.quality_rate, 4), "timing": timing}, indent=1))


if __name__ == "__main__":
    main()
