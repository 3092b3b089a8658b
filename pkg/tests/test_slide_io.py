import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from PIL import Image

from pathbench.slide_io import SlideError, find_slides, open_slide, read_region, resolve_slide, thumbnail


def _pyramid(tmp_path, base, n_levels, name="pyr"):
    """Pyramid whose level L is the exact 2x2 box average of level L-1 (rounded)."""
    d = tmp_path / name
    d.mkdir()
    levels, cur = [], base
    for i in range(n_levels):
        Image.fromarray(cur).save(d / f"L{i}.png")
        levels.append({"file": f"L{i}.png", "width": cur.shape[1], "height": cur.shape[0]})
        h, w = cur.shape[0] // 2, cur.shape[1] // 2
        cur = np.rint(cur[:2 * h, :2 * w].reshape(h, 2, w, 2, 3).mean((1, 3))).astype(np.uint8)
    (d / "meta.json").write_text(json.dumps({"id": name, "levels": levels}))
    return d


class TestOpen:
    def test_flat_png_single_level(self, write_png):
        s = open_slide(write_png(np.zeros((512, 512, 3))))
        assert [(lv.width, lv.height, lv.downsample) for lv in s.levels] == [(512, 512, 1.0)]

    def test_ppm(self, tmp_path):
        Image.fromarray(np.full((5, 7, 3), 9, np.uint8)).save(tmp_path / "a.ppm")
        s = open_slide(tmp_path / "a.ppm")
        assert s.dimensions == (7, 5) and s.id == "a"

    def test_pyramid_downsamples(self, tmp_path):
        d = tmp_path / "p"
        d.mkdir()
        Image.new("RGB", (64, 64)).save(d / "a.png")
        Image.new("RGB", (16, 16)).save(d / "b.png")
        (d / "meta.json").write_text(json.dumps({"id": "x", "levels": [
            {"file": "a.png", "width": 64, "height": 64}, {"file": "b.png", "width": 16, "height": 16}]}))
        s = open_slide(d)
        assert [lv.downsample for lv in s.levels] == [1.0, 4.0] and s.id == "x"

    def test_missing(self, tmp_path):
        with pytest.raises(SlideError, match="not found"):
            open_slide(tmp_path / "nope.png")

    def test_unsupported(self, tmp_path):
        (tmp_path / "a.tif").write_bytes(b"II*\x00")
        with pytest.raises(SlideError, match="unsupported"):
            open_slide(tmp_path / "a.tif")

    def test_corrupt_header(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not a png at all")
        with pytest.raises(SlideError, match="corrupt"):
            open_slide(tmp_path / "bad.png")

    def test_missing_meta(self, tmp_path):
        (tmp_path / "d").mkdir()
        with pytest.raises(SlideError, match="metadata"):
            open_slide(tmp_path / "d")

    def test_find_and_resolve(self, tmp_path, write_png):
        write_png(np.zeros((4, 4, 3)), "a.png")
        write_png(np.zeros((4, 4, 3)), "b.png")
        _pyramid(tmp_path, np.zeros((8, 8, 3), np.uint8), 2, "c")
        assert [p.name for p in find_slides(tmp_path)] == ["a.png", "b.png", "c"]
        assert resolve_slide(tmp_path, "b").name == "b.png"
        assert resolve_slide(tmp_path, "c").name == "c"


class TestReadRegion:
    @pytest.fixture
    def slide(self, write_png, rng):
        self.img = rng.integers(0, 256, (40, 60, 3), dtype=np.uint8)
        return open_slide(write_png(self.img))

    def test_full_image(self, slide):
        np.testing.assert_array_equal(read_region(slide, 0, 0, 0, 60, 40), self.img)

    def test_corner_pixel(self, slide):
        np.testing.assert_array_equal(read_region(slide, 0, 0, 0, 1, 1), self.img[:1, :1])

    def test_empty(self, slide):
        with pytest.raises(SlideError, match="empty region"):
            read_region(slide, 0, 0, 0, 0, 5)

    def test_out_of_bounds(self, slide):
        with pytest.raises(SlideError, match="out of bounds"):
            read_region(slide, 0, 50, 0, 11, 5)

    def test_bad_level(self, slide):
        with pytest.raises(SlideError, match="invalid level"):
            read_region(slide, 1, 0, 0, 1, 1)

    def test_repeatable_and_thread_safe(self, slide):
        args = [(0, 3, 4, 20, 10)] * 16
        with ThreadPoolExecutor(4) as ex:
            outs = list(ex.map(lambda a: read_region(slide, *a).tobytes(), args))
        assert len(set(outs)) == 1


class TestThumbnail:
    def test_halving_chain(self, tmp_path):
        base = np.zeros((4096, 8192, 3), np.uint8)
        d = _pyramid(tmp_path, base, 3)
        thumb, scale = thumbnail(open_slide(d), 2048)
        assert thumb.shape == (1024, 2048, 3) and scale == 4.0

    def test_small_unchanged(self, write_png, rng):
        img = rng.integers(0, 256, (100, 100, 3), dtype=np.uint8)
        thumb, scale = thumbnail(open_slide(write_png(img)), 2048)
        np.testing.assert_array_equal(thumb, img)
        assert scale == 1.0

    def test_constant(self, write_png):
        img = np.empty((300, 500, 3), np.uint8)
        img[:] = (17, 130, 244)
        thumb, _ = thumbnail(open_slide(write_png(img)), 64)
        assert thumb.shape == (38, 64, 3)
        assert (thumb == (17, 130, 244)).all()

    def test_aspect_and_bound(self, write_png):
        for h, w in [(300, 500), (777, 123), (64, 4000)]:
            thumb, scale = thumbnail(open_slide(write_png(np.zeros((h, w, 3)), f"{h}x{w}.png")), 50)
            th, tw = thumb.shape[:2]
            assert max(th, tw) <= 50
            assert abs(th - h * tw / w) <= 1
            assert scale == w / tw

    def test_levels_agree(self, tmp_path, rng):
        # smooth random image so box filtering is well-conditioned
        coarse = rng.integers(0, 256, (16, 16, 3)).astype(np.float64)
        base = np.rint(np.kron(coarse, np.ones((32, 32, 1)))).astype(np.uint8)
        d = _pyramid(tmp_path, base, 4)
        slide = open_slide(d)
        ref, _ = thumbnail(slide, 64)
        for lv in range(len(slide.levels)):
            pixels = slide.level_pixels(lv)
            k = pixels.shape[0] // 64
            direct = pixels.reshape(64, k, 64, k, 3).mean((1, 3))
            assert np.abs(direct - ref.astype(float)).max() <= 1.0

    def test_min_dim(self, write_png):
        with pytest.raises(ValueError):
            thumbnail(open_slide(write_png(np.zeros((4, 4, 3)))), 8)
