import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_otsu
from pathbench.slide_io import open_slide
from pathbench.tissue import (
    ManifestError,
    PatchManifest,
    PatchRecord,
    TilingConfig,
    TissueMask,
    build_manifest,
    luma,
    manifest_to_jsonl,
    otsu_from_histogram,
    otsu_threshold,
    patch_tissue_fraction,
    read_manifest,
    sample_unique,
    tile_grid,
    tissue_mask,
    write_manifest,
)


class TestLuma:
    @pytest.mark.parametrize("rgb, expected", [
        ((255, 255, 255), 255),
        ((0, 0, 0), 0),
        ((255, 0, 0), 76),  # 76.245
        ((0, 255, 0), 150),  # 149.685
        ((0, 0, 255), 29),  # 29.07
    ])
    def test_fixed_weights(self, rgb, expected):
        assert luma(np.array([[rgb]], dtype=np.uint8))[0, 0] == expected

    def test_matches_integer_rounding(self):
        rgb = np.stack(np.meshgrid(np.arange(0, 256, 3), np.arange(0, 256, 5), np.arange(0, 256, 7),
                                   indexing="ij"), -1).reshape(-1, 1, 3).astype(np.uint8)
        r, g, b = (rgb[..., i].astype(int) for i in range(3))
        num = (299 * r + 587 * g + 114 * b).ravel()
        expected = num // 1000 + (num % 1000 >= 500)
        np.testing.assert_array_equal(luma(rgb).ravel(), expected)


class TestOtsu:
    def test_bimodal_ties_pick_smallest(self):
        gray = np.array([10] * 50 + [200] * 50, dtype=np.uint8)
        assert otsu_threshold(gray) == 10

    def test_single_value_is_degenerate(self):
        assert otsu_threshold(np.full((4, 4), 128, dtype=np.uint8)) is None

    def test_extremes(self):
        hist = [0] * 256
        hist[0] = hist[255] = 1
        assert otsu_from_histogram(hist) == 0
        assert brute_otsu(hist) == 0

    def test_empty_image(self):
        with pytest.raises(ValueError, match="empty"):
            otsu_threshold(np.zeros((0,), dtype=np.uint8))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=256, max_size=256).filter(lambda h: sum(h) > 0))
    def test_matches_brute_force(self, hist):
        assert otsu_from_histogram(hist) == brute_otsu(hist)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 30), min_size=256, max_size=256).filter(lambda h: sum(h) > 0),
           st.integers(2, 1000))
    def test_scale_invariant(self, hist, k):
        assert otsu_from_histogram(hist) == otsu_from_histogram([k * c for c in hist])

    def test_sparse_histograms(self, rng):
        for _ in range(50):
            hist = [0] * 256
            for v in rng.choice(256, size=rng.integers(1, 5), replace=False):
                hist[v] = int(rng.integers(1, 1000))
            assert otsu_from_histogram(hist) == brute_otsu(hist)


class TestMask:
    def test_bimodal_flags_dark_pixels(self):
        gray = np.array([[10, 200], [200, 10]], dtype=np.uint8)
        m = tissue_mask(gray, 10)
        np.testing.assert_array_equal(m.bits, gray == 10)

    def test_degenerate_is_empty(self):
        assert not tissue_mask(np.zeros((3, 3), np.uint8), None).bits.any()

    def test_zero_threshold_all_black(self):
        assert tissue_mask(np.zeros((3, 3), np.uint8), 0).bits.all()


class TestGrid:
    def test_partial_edges_dropped(self):
        assert sorted(tile_grid(500, 500, 224)) == [(0, 0), (0, 224), (224, 0), (224, 224)]

    def test_exact_fit(self):
        assert tile_grid(224, 224, 224) == [(0, 0)]

    def test_no_full_column(self):
        assert tile_grid(223, 500, 224) == []

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 3000), st.integers(1, 3000), st.integers(1, 500))
    def test_grid_properties(self, w, h, ps):
        g = tile_grid(w, h, ps)
        assert len(g) == (w // ps) * (h // ps)
        assert len(set(g)) == len(g)
        assert all(x % ps == 0 and y % ps == 0 and x + ps <= w and y + ps <= h for x, y in g)


class TestTissueFraction:
    def test_full_tissue(self):
        m = TissueMask(np.ones((10, 10), bool), 100, 1.0)
        assert patch_tissue_fraction(m, PatchRecord("s", 0, 0, 0, 4, 0.0)) == 1.0

    def test_half_region(self):
        bits = np.zeros((8, 8), bool)
        bits[:, :4] = True
        m = TissueMask(bits, 100, 1.0)
        assert patch_tissue_fraction(m, PatchRecord("s", 0, 2, 0, 4, 0.0)) == 0.5

    def test_scaled_footprint(self):
        # 224 px at scale 4 covers mask columns/rows [56, 112): 56x56 = 3136 mask pixels
        bits = np.zeros((200, 200), bool)
        region = np.zeros(56 * 56, bool)
        region[np.random.default_rng(0).choice(56 * 56, 17, replace=False)] = True
        bits[56:112, 56:112] = region.reshape(56, 56)
        bits[55, :] = bits[:, 55] = bits[112, :] = bits[:, 112] = True  # neighbours must not count
        m = TissueMask(bits, 100, 4.0)
        assert patch_tissue_fraction(m, PatchRecord("s", 0, 224, 224, 224, 0.0)) == 17 / 3136

    def test_outward_rounding(self):
        # scale 3: [1/3, 5/3) -> mask pixels [0, 2)
        bits = np.array([[True, False, False]])
        m = TissueMask(bits, 1, 3.0)
        assert patch_tissue_fraction(m, PatchRecord("s", 0, 1, 0, 4, 0.0)) == 0.5

    def test_outside_mask(self):
        m = TissueMask(np.ones((4, 4), bool), 1, 1.0)
        with pytest.raises(ValueError, match="outside"):
            patch_tissue_fraction(m, PatchRecord("s", 0, 8, 8, 4, 0.0))


def _square_slide(write_png, top_left=(100, 100), size=(672, 672)):
    img = np.full((*size, 3), 240, dtype=np.uint8)
    y, x = top_left
    img[y:y + 224, x:x + 224] = (90, 40, 120)
    return open_slide(write_png(img, "square.png"))


class TestBuildManifest:
    def test_white_slide_is_empty(self, write_png):
        slide = open_slide(write_png(np.full((448, 448, 3), 255, np.uint8)))
        m = build_manifest(slide)
        assert len(m) == 0 and m.n_grid == 4

    def test_dark_square(self, write_png):
        # square covers [100, 324)^2: overlaps grid cells 0 and 1 on both axes
        # fractions 124*124, 124*100, 100*124, 100*100 over 224^2, all >= 0.1
        m = build_manifest(_square_slide(write_png), TilingConfig(min_tissue_fraction=0.1))
        got = {(r.x, r.y): r.tissue_fraction for r in m.records}
        assert set(got) == {(0, 0), (224, 0), (0, 224), (224, 224)}
        assert got[(0, 0)] == 124 * 124 / 224**2
        assert got[(224, 224)] == 100 * 100 / 224**2
        assert m.n_grid == 9 and m.n_rejected == 5

    def test_threshold_filters_slivers(self, write_png):
        # fractions 124*124/224^2=0.306, 0.247, 0.247, 0.199 -> cutoff 0.25 keeps 1
        m = build_manifest(_square_slide(write_png), TilingConfig(min_tissue_fraction=0.25))
        assert [(r.x, r.y) for r in m.records] == [(0, 0)]

    def test_deterministic_bytes(self, write_png):
        slide = _square_slide(write_png)
        a = manifest_to_jsonl(build_manifest(slide))
        b = manifest_to_jsonl(build_manifest(slide))
        assert a == b

    def test_sorted_unique_inbounds(self, write_png):
        img = np.full((900, 1100, 3), 235, np.uint8)
        img[50:700, 30:500] = (100, 50, 130)
        img[400:880, 600:1090] = (180, 90, 150)
        m = build_manifest(open_slide(write_png(img)), TilingConfig(patch_size=100, min_tissue_fraction=0.0))
        keys = [(r.slide_id, r.y, r.x) for r in m.records]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)
        assert m.n_grid == len(tile_grid(1100, 900, 100)) == len(m)  # min 0 keeps everything

    def test_pyramid_level(self, tmp_path, write_png):
        import json
        from PIL import Image
        base = np.full((896, 896, 3), 240, np.uint8)
        base[0:448, 0:448] = (90, 40, 120)
        d = tmp_path / "pyr"
        d.mkdir()
        Image.fromarray(base).save(d / "L0.png")
        half = base.reshape(448, 2, 448, 2, 3).mean((1, 3)).astype(np.uint8)
        Image.fromarray(half).save(d / "L1.png")
        (d / "meta.json").write_text(json.dumps({"id": "p", "levels": [
            {"file": "L0.png", "width": 896, "height": 896},
            {"file": "L1.png", "width": 448, "height": 448}]}))
        m = build_manifest(open_slide(d), TilingConfig(patch_size=112, level=1))
        assert {(r.x, r.y) for r in m.records} == {(0, 0), (112, 0), (0, 112), (112, 112)}
        assert all(r.level == 1 for r in m.records)

    def test_roundtrip_file(self, tmp_path, write_png):
        m = build_manifest(_square_slide(write_png))
        write_manifest(m, tmp_path / "m.jsonl")
        back = read_manifest(tmp_path / "m.jsonl")
        assert back.records == m.records and back.config_hash == m.config_hash
        assert [r.tissue_fraction for r in back.records] == [r.tissue_fraction for r in m.records]
        header = (tmp_path / "m.jsonl").read_text().splitlines()[0]
        assert '"config_hash"' in header and '"version"' in header and '"seed"' in header

    def test_duplicates_rejected(self):
        r = PatchRecord("s", 0, 0, 0, 4, 1.0)
        with pytest.raises(ManifestError):
            PatchManifest([r, r], "h")

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TilingConfig(min_tissue_fraction=1.5)
        with pytest.raises(ValueError):
            TilingConfig(patch_size=0)


class TestSampleUnique:
    @pytest.fixture
    def manifest(self):
        recs = [PatchRecord("s", 0, 4 * i, 0, 4, 1.0) for i in range(40)]
        return PatchManifest(recs, "h")

    def test_exhaustive_is_permutation(self, manifest):
        got = sample_unique(manifest, 40, seed=3)
        assert sorted(got) == manifest.records and got != manifest.records

    def test_zero(self, manifest):
        assert sample_unique(manifest, 0, seed=3) == []

    def test_stable(self, manifest):
        assert sample_unique(manifest, 10, 5) == sample_unique(manifest, 10, 5)
        assert sample_unique(manifest, 10, 5) != sample_unique(manifest, 10, 6)

    def test_no_repeats(self, manifest):
        for seed in range(20):
            s = sample_unique(manifest, 25, seed)
            assert len(set(s)) == 25

    def test_too_many(self, manifest):
        with pytest.raises(ValueError):
            sample_unique(manifest, 41, 0)
