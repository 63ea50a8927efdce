import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlgdd.errors import BoundsError, ParseError, UsageError
from dlgdd.layout import (
    ElementClass,
    LayoutElement,
    PageLayout,
    ViolationKind,
    element_count_distribution,
    grammar_generate_corpus,
    iou,
    is_valid,
    layouts_from_dict,
    read_layouts,
    sample_latent_layout,
    validate_layout,
    write_layouts,
)

F, T, X = ElementClass.FIGURE, ElementClass.TABLE, ElementClass.TEXT


def box(x, y, w, h, cls=F):
    return LayoutElement(cls, x, y, w, h)


def raster_iou(a, b, n=1000):
    """Pixel-count IoU on an n x n grid (pixel centres)."""
    c = (np.arange(n) + 0.5) / n

    def cover(e):
        return ((c >= e.x) & (c < e.x + e.w))[None, :] & ((c >= e.y) & (c < e.y + e.h))[:, None]

    ma, mb = cover(a), cover(b)
    return (ma & mb).sum() / (ma | mb).sum()


def test_class_codes_are_stable():
    assert [c.value for c in ElementClass] == [0, 1, 2]
    assert [c.tag for c in ElementClass] == ["figure", "table", "text"]
    assert ElementClass.parse("table") is T and ElementClass.parse(2) is X


def test_latent_sampling_is_deterministic():
    a = sample_latent_layout(4, 7)
    assert len(a) == 4 and a.latent
    assert a == sample_latent_layout(4, 7)
    assert sample_latent_layout(1, 0) == sample_latent_layout(1, 0)
    # unbounded reals, not squashed
    g = np.concatenate([sample_latent_layout(16, s).geometry() for s in range(50)])
    assert (g < 0).any() and (g > 1).any()


@pytest.mark.parametrize("n", [0, 17, -1])
def test_latent_sampling_rejects_bad_counts(n):
    with pytest.raises(BoundsError):
        sample_latent_layout(n, 0)


def test_latent_moments():
    xs = np.array([sample_latent_layout(1, s).geometry()[0, 0] for s in range(10_000)])
    assert abs(xs.mean()) < 0.05
    assert abs(xs.var() - 1.0) < 0.1


def test_latent_class_prior_is_uniform():
    cls = np.concatenate([sample_latent_layout(16, s).classes() for s in range(1000)])
    freq = np.bincount(cls, minlength=3) / cls.size
    assert np.allclose(freq, 1 / 3, atol=0.02)


def test_validate_examples():
    assert validate_layout(PageLayout((box(0.1, 0.1, 0.3, 0.3),))) == []
    (rep,) = validate_layout(PageLayout((box(0.9, 0.1, 0.3, 0.3),)))
    assert rep.kind is ViolationKind.OUT_OF_BOUNDS and rep.magnitude == pytest.approx(0.2)
    (rep,) = validate_layout(PageLayout((box(0.1, 0.1, 0.3, 0.3), box(0.1, 0.1, 0.3, 0.3))), 0.5)
    assert rep.kind is ViolationKind.EXCESSIVE_OVERLAP and rep.index == 1 and rep.magnitude == 1.0
    (rep,) = validate_layout(PageLayout((box(0.1, 0.1, 0.005, 0.3),)))
    assert rep.kind is ViolationKind.DEGENERATE_SIZE and rep.magnitude == pytest.approx(0.005)


def test_validate_rejects_latent():
    with pytest.raises(UsageError):
        validate_layout(sample_latent_layout(3, 0))


def test_layout_cap():
    with pytest.raises(BoundsError):
        PageLayout(tuple(box(0.0, 0.0, 0.1, 0.1) for _ in range(17)))


def test_iou_examples():
    a, b = box(0, 0, 0.5, 0.5), box(0.25, 0.25, 0.5, 0.5)
    assert iou(a, a) == 1.0
    assert iou(a, box(0.6, 0.6, 0.2, 0.2)) == 0.0
    assert iou(a, b) == pytest.approx(0.0625 / 0.4375, abs=1e-12)
    assert raster_iou(a, b) == pytest.approx(0.0625 / 0.4375, abs=2e-3)


unit = st.floats(0.0, 0.9, allow_nan=False)
size = st.floats(0.01, 0.5, allow_nan=False)


@st.composite
def boxes(draw):
    x, y = draw(unit), draw(unit)
    return box(x, y, min(draw(size), 1 - x), min(draw(size), 1 - y))


@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert iou(a, a) == 1.0


def raster_error_bound(a, b, n):
    # pixel-centre sampling shifts each interval length by less than 1/n
    def rect_err(w, h):
        return (w + h) / n + 1 / n**2

    iw = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    ih = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    e_i = rect_err(iw, ih) if inter > 0 else 0.0
    e_u = rect_err(a.w, a.h) + rect_err(b.w, b.h) + e_i
    if union <= e_u:
        return 1.0
    return (e_i + inter / union * e_u) / (union - e_u) + 1e-12


@given(boxes(), boxes())
def test_iou_matches_raster(a, b):
    n = 400
    assert abs(iou(a, b) - raster_iou(a, b, n)) <= raster_error_bound(a, b, n)


def test_academic_columns_align():
    (layout,) = grammar_generate_corpus("academic", 1, 3)
    lefts = sorted({round(e.x, 6) for e in layout if e.cls is X})
    # every text box sits on one of at most two column edges
    groups = [lefts[0]]
    for v in lefts[1:]:
        if v - groups[-1] > 0.01:
            groups.append(v)
    assert len(groups) <= 2
    for e in layout:
        if e.cls is X:
            assert min(abs(e.x - g) for g in groups) < 0.01


def test_magazine_figures_are_larger():
    def mean_fig(style):
        areas = [e.area for l in grammar_generate_corpus(style, 100, 1) for e in l if e.cls is F]
        return np.mean(areas)

    assert mean_fig("magazine") > mean_fig("academic")


@pytest.mark.parametrize("style", ["academic", "magazine"])
def test_grammar_corpus_valid_and_deterministic(style):
    corpus = grammar_generate_corpus(style, 300, 9)
    assert all(is_valid(l, 0.05) for l in corpus)
    assert corpus[:5] == grammar_generate_corpus(style, 5, 9)


def test_grammar_rejects_unknown_style():
    with pytest.raises(UsageError):
        grammar_generate_corpus("newspaper", 3, 0)


def test_count_distribution():
    corpus = grammar_generate_corpus("academic", 200, 0)
    d = element_count_distribution(corpus)
    assert d.sum() == pytest.approx(1.0) and d[0] == 0.0
    assert d[len(corpus[0])] > 0


def test_round_trip(tmp_path):
    corpus = grammar_generate_corpus("magazine", 50, 2)
    write_layouts(corpus, tmp_path / "l.json")
    assert read_layouts(tmp_path / "l.json") == corpus


def test_extra_field_is_named(tmp_path):
    doc = {"pages": [{"elements": [{"class": "figure", "x": 0.1, "y": 0.2, "w": 0.3, "h": 0.4, "z": 1}]}]}
    with pytest.raises(ParseError, match="'z'"):
        layouts_from_dict(doc)


def test_external_fixture(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text('{"pages": [{"elements": [{"class": "figure", "x": 0.1, "y": 0.2, "w": 0.3, "h": 0.4}]}]}')
    (layout,) = read_layouts(path)
    assert layout == PageLayout((box(0.1, 0.2, 0.3, 0.4),))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"pages": [\n  {"elements": [}\n]}')
    with pytest.raises(ParseError, match="line 2"):
        read_layouts(path)


def test_reals_keep_precision(tmp_path):
    layout = PageLayout((box(0.123456789, 0.2, 0.3, 0.4),))
    write_layouts([layout], tmp_path / "p.json")
    x = json.loads((tmp_path / "p.json").read_text())["pages"][0]["elements"][0]["x"]
    assert abs(x - 0.123456789) < 1e-6
