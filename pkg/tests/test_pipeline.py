import json

import numpy as np
import pytest

from dlgdd.cli import main
from dlgdd.dlg import DLGConfig, TrainConfig
from dlgdd.dsd import DSDConfig
from dlgdd.errors import ConfigError, QuotaShortfallError
from dlgdd.pipeline import PipelineConfig, RunManifest, run_pipeline, stage_seeds

TINY_MODEL = DLGConfig(dim=16, heads=2, hidden=24)


def tiny(**kw):
    base = dict(
        corpus_size=200,
        dlg=TrainConfig(epochs=1, batch=64, eval_samples=16),
        model=TINY_MODEL,
        dsd_pages=50,
        quality_dsd=DSDConfig(epochs=1, batch=16),
        cross_dsd=DSDConfig(epochs=1, batch=16),
        batch_size=8,
        quota=1,
        round_cap=3,
        workers=2,
        seed=5,
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny(tau_quality=-2.0, tau_cross=-2.0)
    return cfg, out, run_pipeline(cfg, out)


def test_permissive_quota_stops_in_round_one(tiny_run):
    _, out, manifest = tiny_run
    assert manifest.quota_met and len(manifest.rounds) == 1
    r = manifest.rounds[0]
    assert r.generated == r.decorated == r.accepted_quality == r.accepted_cross == 8
    for name in ("run_manifest.json", "timing.json", "dataset/manifest.json", "models/generator.npz",
                 "models/dsd_quality.npz", "models/dsd_cross.npz"):
        assert (out / name).exists()
    assert "wall" not in (out / "run_manifest.json").read_text()


def test_unreachable_quota(tmp_path, tiny_run):
    cfg, out, _ = tiny_run
    cfg = tiny(tau_quality=2.0, round_cap=2, generator_checkpoint=str(out / "models" / "generator.npz"))
    with pytest.raises(QuotaShortfallError) as info:
        run_pipeline(cfg, tmp_path)
    m = info.value.manifest
    assert len(m.rounds) == 2 and m.selected == 0 and not m.quota_met
    assert info.value.record()["manifest"]["totals"]["accepted_quality"] == 0
    assert json.loads((tmp_path / "run_manifest.json").read_text())["quota_met"] is False


def test_count_algebra(tmp_path, tiny_run):
    _, out, _ = tiny_run
    cfg = tiny(quota=6, round_cap=4, generator_checkpoint=str(out / "models" / "generator.npz"))
    try:
        m = run_pipeline(cfg, tmp_path)
    except QuotaShortfallError as exc:
        m = exc.manifest
    cum = np.zeros(3, int)
    for r in m.rounds:
        assert r.accepted_cross <= r.accepted_quality <= r.decorated == r.generated
        cum += (r.generated, r.accepted_quality, r.accepted_cross)
        assert (r.cumulative_generated, r.cumulative_quality, r.cumulative_cross) == tuple(cum)


def test_stage_seeds_are_stable_and_distinct():
    a = stage_seeds(0)
    assert a == stage_seeds(0) and len(set(a.values())) == len(a)
    assert a != stage_seeds(1)


def test_config_round_trip(tmp_path):
    cfg = tiny()
    cfg.write(tmp_path / "c.json")
    assert PipelineConfig.read(tmp_path / "c.json") == cfg


@pytest.mark.parametrize(
    "doc, match",
    [
        ({}, "'version'"),
        ({"version": 1, "qouta": 3}, "'qouta'"),
        ({"version": 1, "dlg": {"epochz": 3}}, "dlg.epochz"),
        ({"version": 9}, "version"),
    ],
)
def test_config_errors_name_keys(doc, match):
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.from_dict(doc)


@pytest.mark.parametrize(
    "kw",
    [dict(quota=0), dict(batch_size=0), dict(page_size=(384, 300)), dict(asset_dir="/no/such/dir"),
     dict(corpus_style="poster")],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        tiny(**kw).validate()


def test_manifest_dict_shape():
    m = RunManifest(config={}, seeds={})
    d = m.to_dict()
    assert d["totals"] == {"generated": 0, "accepted_quality": 0, "accepted_cross": 0}
    assert m.quality_rate == 0.0 and m.selected == 0


# --- cli -------------------------------------------------------------------------------


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_metrics_identity(tmp_path, capsys):
    from PIL import Image

    mask = np.array([[0, 1], [3, 3]], dtype=np.uint8)
    Image.fromarray(mask, "L").save(tmp_path / "a.png")
    code, out, _ = run_cli(capsys, "metrics", "--pred", str(tmp_path / "a.png"), "--truth", str(tmp_path / "a.png"))
    rec = json.loads(out)
    assert code == 0 and rec["accuracy"] == rec["f1"] == rec["precision"] == rec["recall"] == 1.0


def test_cli_missing_config(capsys):
    code, _, err = run_cli(capsys, "run", "--config", "missing.file", "--out", "x")
    assert code == 2 and "missing.file" in json.loads(err)["message"]


def test_cli_unknown_flag(capsys):
    code, _, err = run_cli(capsys, "verify", "--bogus", "x")
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_cli_missing_key(tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"quota": 3}')
    code, _, err = run_cli(capsys, "corpus-gen", "--config", str(tmp_path / "c.json"), "--out", "x.json")
    assert code == 2 and "'version'" in json.loads(err)["message"]


def test_cli_data_error_exit_code(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run_cli(capsys, "sample", "--generator", str(tmp_path / "bad.json"), "--count", "2",
                           "--out", str(tmp_path / "o.json"))
    assert code == 3 and json.loads(err)["error"] == "data"


def test_cli_quota_shortfall_exit_code(tmp_path, capsys, tiny_run):
    _, out, _ = tiny_run
    cfg = tiny(tau_quality=2.0, round_cap=1, generator_checkpoint=str(out / "models" / "generator.npz"))
    cfg.write(tmp_path / "c.json")
    code, _, err = run_cli(capsys, "run", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "r"))
    rec = json.loads(err)
    assert code == 4 and rec["error"] == "quota_shortfall" and rec["manifest"]["totals"]["accepted_cross"] == 0


def test_cli_stage_commands(tmp_path, capsys, tiny_run):
    _, out, _ = tiny_run
    cfg = tiny()
    cfg.write(tmp_path / "c.json")
    c = ["--config", str(tmp_path / "c.json")]
    assert run_cli(capsys, "corpus-gen", *c, "--count", "200", "--out", str(tmp_path / "corpus.json"))[0] == 0
    assert (tmp_path / "corpus.json.manifest.json").exists()
    assert run_cli(capsys, "train-dlg", *c, "--corpus", str(tmp_path / "corpus.json"), "--epochs", "1",
                   "--out", str(tmp_path / "dlg"))[0] == 0
    assert run_cli(capsys, "sample", *c, "--seed", "3", "--generator", str(tmp_path / "dlg" / "generator.npz"),
                   "--count", "6", "--out", str(tmp_path / "s.json"))[0] == 0
    assert run_cli(capsys, "decorate", *c, "--layouts", str(tmp_path / "s.json"), "--out", str(tmp_path / "ds"))[0] == 0
    code, o, _ = run_cli(capsys, "verify", str(tmp_path / "ds"))
    assert code == 0 and json.loads(o)["ok"]

    # corpus file pointing at the pages exported by the module-level run
    ds = json.loads((out / "dataset" / "manifest.json").read_text())["pages"]
    pages = [out / "dataset" / p["page"] for p in ds]
    from dlgdd.dsd import write_corpus_file

    write_corpus_file([(p, "positive") for p in pages[:4]] + [(p, "target") for p in pages[:4]]
                      + [(tmp_path / "ds" / "pages" / f"page_{i:05d}.png", "negative") for i in range(4)],
                      tmp_path / "corpus_file.json")
    enc = str(out / "models" / "dsd_quality.npz")
    code, o, _ = run_cli(capsys, "filter", *c, "--encoder", enc, "--corpus", str(tmp_path / "corpus_file.json"),
                         "--pages", str(tmp_path / "ds"), "--out", str(tmp_path / "q.csv"))
    assert code == 0 and json.loads(o)["pages"] == 6
    assert len((tmp_path / "q.csv").read_text().splitlines()) == 7
    code, o, _ = run_cli(capsys, "select", *c, "--encoder", enc, "--corpus", str(tmp_path / "corpus_file.json"),
                         "--pages", str(tmp_path / "ds"), "--tau", "-2", "--out", str(tmp_path / "x.csv"))
    assert code == 0 and json.loads(o)["accepted"] == 6


def test_cli_train_dsd_needs_pages(tmp_path, capsys):
    from dlgdd.dsd import write_corpus_file

    write_corpus_file([], tmp_path / "c.json")
    code, _, err = run_cli(capsys, "train-dsd", "--corpus", str(tmp_path / "c.json"), "--out", str(tmp_path / "e.npz"))
    assert code == 3
