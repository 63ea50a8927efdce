import numpy as np
import pytest

from dlgdd.diffcore import grad_check, grad_check_store
from dlgdd.dlg import (
    CriticModel,
    DLGConfig,
    GeneratorModel,
    TrainConfig,
    TrainReport,
    _sample_latents,
    critic_forward,
    critic_loss,
    critic_scores,
    element_encode,
    generator_forward,
    generator_loss,
    overlap_penalty,
    pack_layouts,
    sample_layouts,
    train_adversarial,
    validity_rate,
)
from dlgdd.errors import BoundsError, DataError
from dlgdd.layout import (
    ElementClass,
    LayoutElement,
    PageLayout,
    ViolationKind,
    grammar_generate_corpus,
    iou,
    sample_latent_layout,
    validate_layout,
)

SMALL = DLGConfig(dim=16, heads=2, hidden=24)


@pytest.fixture(scope="module")
def models():
    return GeneratorModel(SMALL, seed=1), CriticModel(SMALL, seed=2)


def test_element_encode(models):
    gen, _ = models
    v = LayoutElement(ElementClass.FIGURE, 0.1, 0.2, 0.3, 0.4)
    e = element_encode(v, gen)
    assert e.shape == (16,)
    assert np.array_equal(e.data, element_encode(v, gen).data)
    other = LayoutElement(ElementClass.TEXT, 0.1, 0.2, 0.3, 0.4)
    assert not np.allclose(e.data, element_encode(other, gen).data)
    assert element_encode(v, GeneratorModel()).shape == (64,)


def test_generator_output_always_on_page(models):
    gen, _ = models
    for seed in range(10_000 // 16):
        out = generator_forward(sample_latent_layout(16, seed), gen)
        kinds = {r.kind for r in validate_layout(out, overlap_threshold=1.0)}
        assert not kinds & {ViolationKind.OUT_OF_BOUNDS, ViolationKind.DEGENERATE_SIZE}


def test_generator_extreme_latents_stay_on_page():
    gen = GeneratorModel(SMALL, seed=3)
    for scale in (1e2, 1e4):
        rng = np.random.default_rng(0)
        lat = PageLayout.from_arrays(rng.integers(0, 3, 16), rng.normal(size=(16, 4)) * scale, latent=True)
        out = generator_forward(lat, gen)
        assert not [r for r in validate_layout(out, 1.0) if r.kind is not ViolationKind.EXCESSIVE_OVERLAP]


def test_generator_permutation_equivariant(models):
    gen, _ = models
    lat = sample_latent_layout(7, 11)
    order = np.random.default_rng(0).permutation(7)
    a = generator_forward(lat, gen)
    b = generator_forward(lat.permuted(order), gen)
    assert np.allclose(a.geometry()[order], b.geometry(), atol=1e-12)
    assert np.array_equal(a.classes()[order], b.classes())
    assert generator_forward(lat, gen) == a


def test_generator_bounds_error(models):
    gen, _ = models
    with pytest.raises(BoundsError):
        generator_forward(PageLayout.from_arrays(np.zeros(17, int), np.zeros((17, 4)), latent=True),
                          GeneratorModel(DLGConfig(n_max=16)))


def test_critic_permutation_invariant(models):
    _, critic = models
    layout = grammar_generate_corpus("academic", 1, 4)[0]
    order = np.random.default_rng(1).permutation(len(layout))
    assert critic_forward(layout, critic) == pytest.approx(critic_forward(layout.permuted(order), critic), abs=1e-9)


def test_critic_padding_does_not_change_scores(models):
    _, critic = models
    layouts = grammar_generate_corpus("magazine", 5, 4)
    together = critic_scores(layouts, critic)
    alone = np.array([critic_forward(l, critic) for l in layouts])
    assert np.allclose(together, alone, atol=1e-9) and np.all(np.isfinite(together))


def test_overlap_penalty_matches_iou():
    a = LayoutElement(ElementClass.FIGURE, 0, 0, 0.5, 0.5)
    b = LayoutElement(ElementClass.TEXT, 0.25, 0.25, 0.5, 0.5)
    c = LayoutElement(ElementClass.TEXT, 0.6, 0.1, 0.3, 0.3)
    layouts = [PageLayout((a, b, c)), PageLayout((b,))]
    _, geom, pad = pack_layouts(layouts)
    want = (iou(a, b) + iou(a, c) + iou(b, c)) / 2
    assert overlap_penalty(geom, pad).item() == pytest.approx(want, abs=1e-12)
    assert grad_check(lambda g: overlap_penalty(g, pad), geom + 1e-3) < 1e-4


def test_generator_loss_gradcheck():
    gen, critic = GeneratorModel(SMALL, seed=5), CriticModel(SMALL, seed=6)
    rng = np.random.default_rng(0)
    z = _sample_latents(rng, [3, 5], 5)
    noise = (rng.normal(0, 0.1, (2, 5, 3)), rng.normal(0, 0.005, (2, 5, 4)))
    err = grad_check_store(lambda: generator_loss(gen, critic, z, 5.0, noise), gen.store, per_param=4)
    assert err < 1e-4


def test_critic_loss_gradcheck():
    critic = CriticModel(SMALL, seed=7)
    onehot, geom, pad = pack_layouts(grammar_generate_corpus("academic", 3, 0))
    rng = np.random.default_rng(1)
    fake = (rng.dirichlet(np.ones(3), size=onehot.shape[:2]), rng.uniform(0, 0.5, geom.shape))
    err = grad_check_store(lambda: critic_loss(critic, (onehot, geom), pad, fake, pad), critic.store, per_param=4)
    assert err < 1e-4


def test_sampling_contracts(models):
    gen, _ = models
    assert sample_layouts(gen, 0) == []
    a = sample_layouts(gen, 100, seed=3)
    assert a == sample_layouts(gen, 100, seed=3) and len(a) == 100
    assert all(not l.latent for l in a)


def test_sampling_follows_count_distribution():
    dist = np.zeros(17)
    dist[[2, 5]] = [0.25, 0.75]
    gen = GeneratorModel(SMALL, n_dist=dist)
    counts = np.array([len(l) for l in sample_layouts(gen, 2000, seed=0)])
    assert set(counts) == {2, 5}
    assert abs((counts == 5).mean() - 0.75) < 0.03


def test_train_contracts():
    corpus = grammar_generate_corpus("academic", 200, 0)
    gen, critic, report = train_adversarial(corpus, TrainConfig(epochs=0), SMALL)
    assert report.epochs == [] and isinstance(gen, GeneratorModel)
    fresh = GeneratorModel(SMALL, seed=0)  # different seed than the spawned one
    assert any(not np.array_equal(t.data, fresh.store[n].data) for n, t in gen.store.items())
    with pytest.raises(DataError):
        train_adversarial(corpus[:199], TrainConfig(epochs=1), SMALL)


def test_train_is_deterministic(tmp_path):
    corpus = grammar_generate_corpus("academic", 256, 0)
    cfg = TrainConfig(epochs=2, batch=64, eval_samples=32, ema_decay=0.9)
    g1, c1, r1 = train_adversarial(corpus, cfg, SMALL)
    g2, c2, r2 = train_adversarial(corpus, cfg, SMALL)
    assert r1.to_jsonl() == r2.to_jsonl() and len(r1.epochs) == 2
    g1.save(tmp_path / "a.npz")
    g2.save(tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    for rec in r1.epochs:
        assert 0.0 <= rec.validity_rate <= 1.0


def test_checkpoints_round_trip(tmp_path, models):
    gen, critic = models
    gen.save(tmp_path / "g.npz")
    critic.save(tmp_path / "c.npz")
    g2 = GeneratorModel.load(tmp_path / "g.npz")
    assert sample_layouts(g2, 10, seed=1) == sample_layouts(gen, 10, seed=1)
    layout = grammar_generate_corpus("academic", 1, 0)[0]
    assert critic_forward(layout, CriticModel.load(tmp_path / "c.npz")) == critic_forward(layout, critic)
    with pytest.raises(DataError):
        CriticModel.load(tmp_path / "g.npz")


def test_report_jsonl(tmp_path):
    from dlgdd.dlg import EpochRecord

    rep = TrainReport(seed=3, epochs=[EpochRecord(0, 1.0, 2.0, 0.5)])
    rep.write(tmp_path / "r.jsonl")
    assert (tmp_path / "r.jsonl").read_text() == (
        '{"seed": 3, "epoch": 0, "generator_loss": 1.0, "critic_loss": 2.0, "validity_rate": 0.5}\n')


def test_validity_rate():
    good = PageLayout((LayoutElement(ElementClass.TEXT, 0.1, 0.1, 0.2, 0.2),))
    bad = PageLayout((good[0], good[0]))
    assert validity_rate([good, bad]) == 0.5 and validity_rate([]) == 0.0
