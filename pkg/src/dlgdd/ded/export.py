"""Write rendered pages as a dataset directory and check it against its manifest.

Directory layout::

    pages/page_NNNNN.png         8-bit RGB page
    masks/mask_NNNNN.png         8-bit single channel, class codes 0..3
    masks_color/mask_NNNNN.png   paletted view of the mask (black/red/blue/green)
    layouts.json                 source layouts, layout file schema
    manifest.json                relative paths, sha256 checksums, seeds, render logs
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from ..layout import write_layouts
from .render import MASK_COLORS, RenderedPage

MANIFEST_VERSION = 1


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _save_png(img: Image.Image, path: Path):
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def export_dataset(pages: list[RenderedPage], out_dir) -> dict:
    out = Path(out_dir)
    try:
        for sub in ("pages", "masks", "masks_color"):
            (out / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from None
    palette = MASK_COLORS.reshape(-1).tolist() + [0] * (768 - MASK_COLORS.size)
    records = []
    for i, p in enumerate(pages):
        rel = {
            "page": f"pages/page_{i:05d}.png",
            "mask": f"masks/mask_{i:05d}.png",
            "mask_color": f"masks_color/mask_{i:05d}.png",
        }
        _save_png(Image.fromarray(p.page, "RGB"), out / rel["page"])
        _save_png(Image.fromarray(p.mask, "L"), out / rel["mask"])
        colored = Image.fromarray(p.mask, "P")
        colored.putpalette(palette)
        _save_png(colored, out / rel["mask_color"])
        records.append(
            {
                "id": i,
                **rel,
                "size": [int(p.page.shape[1]), int(p.page.shape[0])],
                "seed": p.seed,
                "sha256": {k: sha256_file(out / v) for k, v in rel.items()},
                "render_log": p.log,
            }
        )
    write_layouts([p.layout for p in pages], out / "layouts.json")
    manifest = {
        "format": "dlgdd-dataset",
        "version": MANIFEST_VERSION,
        "layouts": "layouts.json",
        "layouts_sha256": sha256_file(out / "layouts.json"),
        "pages": records,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if manifest.get("format") != "dlgdd-dataset":
        raise DataError(f"{path}: not a dataset manifest")
    return manifest


def verify_dataset(out_dir) -> list[str]:
    """Problems found when re-hashing every file listed in the manifest; empty when intact."""
    out = Path(out_dir)
    manifest = load_manifest(out)
    problems = []
    expected = [(manifest["layouts"], manifest["layouts_sha256"])]
    for rec in manifest["pages"]:
        expected.extend((rec[k], digest) for k, digest in rec["sha256"].items())
    for rel, digest in expected:
        path = out / rel
        if not path.exists():
            problems.append(f"missing file {rel}")
        elif sha256_file(path) != digest:
            problems.append(f"checksum mismatch {rel}")
    return problems


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def read_page(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))
