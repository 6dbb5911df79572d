import dataclasses
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emdnet.dataset import (
    SUBSETS,
    build_corpus,
    decode_pgm,
    encode_pgm,
    export_corpus,
    glyph_segments,
    import_corpus,
    load_image,
    make_contents,
    make_partition,
    make_styles,
    rasterize_strokes,
    render_glyph,
    sample_triplets,
    save_image,
    split_triplets,
)
from emdnet.errors import DataError, FormatError
from emdnet.losses import black_pixel_stats


# rendering ---------------------------------------------------------------------

def test_render_deterministic():
    s, c = make_styles(1, 4)[0], make_contents(1, 4)[0]
    assert render_glyph(s, c, 32).tobytes() == render_glyph(s, c, 32).tobytes()


def test_wider_pen_inks_more_pixels():
    c = make_contents(5, 0)
    base = make_styles(1, 0)[0]
    for content in c:
        thin = render_glyph(dataclasses.replace(base, stroke_width=1.0), content, 32)
        thick = render_glyph(dataclasses.replace(base, stroke_width=3.0), content, 32)
        assert black_pixel_stats(thick)[0] > black_pixel_stats(thin)[0]


def test_zero_slant_is_unsheared_skeleton():
    style = dataclasses.replace(make_styles(1, 2)[0], slant=0.0)
    content = make_contents(1, 2)[0]
    size = 32
    margin = 0.5 * style.stroke_width + 1.0
    span = (size - 2 * margin) * style.scale
    pts = (np.asarray(content.strokes) - 0.5) * span + size / 2
    np.testing.assert_allclose(glyph_segments(style, content, size), pts)
    direct = rasterize_strokes(pts, size, style.stroke_width, style.corner_rounding, style.ink_level)
    assert render_glyph(style, content, size).tobytes() == direct.tobytes()


def test_slant_changes_image():
    style = dataclasses.replace(make_styles(1, 2)[0], slant=0.3)
    content = make_contents(1, 2)[0]
    flat = dataclasses.replace(style, slant=0.0)
    assert not np.array_equal(render_glyph(style, content, 32), render_glyph(flat, content, 32))


def test_too_small_render_rejected():
    with pytest.raises(DataError):
        render_glyph(make_styles(1)[0], make_contents(1)[0], 8)


def test_contents_distinct():
    skels = [c.strokes for c in make_contents(64, 0)]
    assert len(set(skels)) == 64


def test_every_glyph_has_ink(toy_corpus):
    assert toy_corpus.images.dtype == np.float32
    assert np.all((toy_corpus.images <= 0.5).any(axis=(2, 3)))
    assert len(np.unique(np.round([s.ink_level for s in toy_corpus.styles], 6))) == 8


# partition ---------------------------------------------------------------------

def test_paper_partition_sizes():
    p = make_partition(832, 1732, 0.75)
    assert (len(p.known_styles), len(p.novel_styles)) == (624, 208)
    assert (len(p.known_contents), len(p.novel_contents)) == (1299, 433)


def test_toy_partition_sizes_and_determinism():
    p = make_partition(8, 16, 0.75, seed=3)
    assert (len(p.known_styles), len(p.novel_styles), len(p.known_contents), len(p.novel_contents)) == (6, 2, 12, 4)
    assert p == make_partition(8, 16, 0.75, seed=3)


def test_bad_fraction_rejected():
    with pytest.raises(DataError):
        make_partition(8, 16, 1.0)


def test_subsets_cover_grid_disjointly(toy_corpus):
    p = toy_corpus.partition
    cells = [c for s in SUBSETS for c in p.cells(s)]
    assert len(cells) == len(set(cells)) == 8 * 16
    for s in SUBSETS:
        assert all(p.subset_of(i, j) == s for i, j in p.cells(s))


def test_corpus_determinism():
    a, b = build_corpus(4, 6, 32, seed=9), build_corpus(4, 6, 32, seed=9)
    assert a.images.tobytes() == b.images.tobytes() and a.partition == b.partition


# triplets ----------------------------------------------------------------------

def check_triplet(p, t, subset, r):
    assert p.subset_of(t.style_id, t.content_id) == subset
    assert len(t.style_ref_contents) == len(set(t.style_ref_contents)) == r
    assert len(t.content_ref_styles) == len(set(t.content_ref_styles)) == r
    assert set(t.style_ref_contents) <= set(p.known_contents)
    assert set(t.content_ref_styles) <= set(p.known_styles)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(SUBSETS), st.integers(1, 5))
def test_triplet_invariants(seed, subset, r):
    p = make_partition(8, 16, 0.75, seed=seed % 7)
    for t in sample_triplets(p, subset, r, 20, seed):
        check_triplet(p, t, subset, r)
        if r < 6:  # enough known styles to leave the target out
            assert t.style_id not in t.content_ref_styles
        assert t.content_id not in t.style_ref_contents


def test_d4_refs_come_from_d3_and_d2(toy_corpus):
    p = toy_corpus.partition
    for t in sample_triplets(p, "D4", 4, 50, 1):
        assert all(p.subset_of(t.style_id, j) == "D3" for j in t.style_ref_contents)
        assert all(p.subset_of(i, t.content_id) == "D2" for i in t.content_ref_styles)


def test_batch_refs_share_target_row_and_column(toy_corpus):
    ts = sample_triplets(toy_corpus.partition, "D1", 4, 6, 2)
    sr, cr, tg = toy_corpus.batch(ts)
    assert sr.shape == cr.shape == (6, 4, 32, 32) and tg.shape == (6, 1, 32, 32)
    for k, t in enumerate(ts):
        for slot, j in enumerate(t.style_ref_contents):
            assert np.array_equal(sr[k, slot], toy_corpus.images[t.style_id, j])
        for slot, i in enumerate(t.content_ref_styles):
            assert np.array_equal(cr[k, slot], toy_corpus.images[i, t.content_id])


def test_paper_scale_r10_refs_share_style():
    p = make_partition(40, 60, 0.75)
    for t in sample_triplets(p, "D1", 10, 20, 0):
        check_triplet(p, t, "D1", 10)


def test_count_zero_and_errors(toy_corpus):
    p = toy_corpus.partition
    assert sample_triplets(p, "D1", 4, 0) == []
    with pytest.raises(DataError, match="r=7"):
        sample_triplets(p, "D1", 7, 1)
    with pytest.raises(DataError):
        sample_triplets(p, "D5", 2, 1)


def test_sampling_deterministic(toy_corpus):
    p = toy_corpus.partition
    assert sample_triplets(p, "D2", 3, 10, 5) == sample_triplets(p, "D2", 3, 10, 5)


def test_split_triplets():
    p = make_partition(8, 16)
    t = sample_triplets(p, "D1", 3, 1, 0)[0]
    parts = split_triplets([t])
    assert len(parts) == 9 and all(q.r == 1 for q in parts)
    assert {(q.style_ref_contents[0], q.content_ref_styles[0]) for q in parts} == \
        {(j, i) for j in t.style_ref_contents for i in t.content_ref_styles}


# PGM ---------------------------------------------------------------------------

def test_pgm_round_trip(tmp_path, toy_corpus):
    img = toy_corpus.image(0, 0)
    save_image(img, tmp_path / "a.pgm")
    back = load_image(tmp_path / "a.pgm")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1 / 255 + 1e-7


def test_pgm_white_is_255():
    data = encode_pgm(np.ones((3, 4)))
    assert data.startswith(b"P5\n4 3\n255\n")
    assert set(data[-12:]) == {255}


def test_pgm_comment_and_16bit():
    img = decode_pgm(b"P5 # comment\n2 1\n65535\n" + np.array([0, 65535], ">u2").tobytes())
    np.testing.assert_array_equal(img, [[[0.0, 1.0]]])


@pytest.mark.parametrize("data,offset", [(b"P6\n1 1\n255\n\x00", 0), (b"P5\n2 2\n255\n\x00", 12),
                                         (b"P5\nx 2\n255\n", 3)])
def test_pgm_errors(data, offset):
    with pytest.raises(FormatError, match=f"offset {offset}"):
        decode_pgm(data)


def test_non_pgm_file(tmp_path):
    (tmp_path / "x.pgm").write_text("hello")
    with pytest.raises(FormatError, match="x.pgm"):
        load_image(tmp_path / "x.pgm")


# on-disk corpus ----------------------------------------------------------------

def test_export_import_round_trip(tmp_path):
    c = build_corpus(4, 6, 16, seed=1)
    export_corpus(c, tmp_path)
    back = import_corpus(tmp_path)
    assert back.partition == c.partition and back.seed == 1
    assert np.abs(back.images - c.images).max() <= 1 / 255 + 1e-7
    assert back.present.all()


def test_import_empty_dir(tmp_path):
    with pytest.raises(DataError):
        import_corpus(tmp_path)


def test_import_missing_cell_warns(tmp_path):
    c = build_corpus(4, 6, 16, seed=1)
    export_corpus(c, tmp_path)
    (tmp_path / "style_2" / "content_3.pgm").unlink()
    with pytest.warns(UserWarning, match=r"\(2,3\)"):
        back = import_corpus(tmp_path)
    assert not back.present[2, 3] and back.present.sum() == 23
    for t in sample_triplets(back.partition, "D1", 2, 50, 0, back.present):
        assert (t.style_id, t.content_id) != (2, 3)
        assert not (t.style_id == 2 and 3 in t.style_ref_contents)


def test_import_without_manifest(tmp_path):
    c = build_corpus(4, 6, 16, seed=1)
    export_corpus(c, tmp_path)
    (tmp_path / "manifest.txt").unlink()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = import_corpus(tmp_path)
    assert back.partition == make_partition(4, 6, 0.75, 0)


def test_import_inconsistent_sizes(tmp_path):
    c = build_corpus(2, 2, 16, seed=1)
    export_corpus(c, tmp_path)
    save_image(np.ones((1, 20, 20)), tmp_path / "style_1" / "content_1.pgm")
    with pytest.raises(DataError, match="inconsistent"):
        import_corpus(tmp_path)
