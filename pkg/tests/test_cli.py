import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from pathbench.cli import run
from pathbench.config import ConfigError, RunConfig
from pathbench.embed import read_embeddings
from pathbench.io_utils import atomic_write_text
from pathbench.tissue import read_manifest


def _slide(path, seed, dark=True):
    r = np.random.default_rng(seed)
    img = np.full((448, 448, 3), 238, np.uint8)
    if dark:
        y, x = r.integers(0, 200, 2)
        img[y:y + 240, x:x + 240] = (110, 60, 140) + r.integers(-10, 10, (240, 240, 3))
    Image.fromarray(img).save(path)
    return path


@pytest.fixture
def slides(tmp_path):
    d = tmp_path / "slides"
    d.mkdir()
    for i in range(8):
        _slide(d / f"s{i}.png", i)
    return d


def test_help(capsys):
    assert run(["tile", "--help"]) == 0
    assert "--min-tissue" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pathbench", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "selftest" in out.stdout


def test_invalid_min_tissue_writes_nothing(tmp_path, slides, capsys):
    out = tmp_path / "m.jsonl"
    assert run(["tile", "--input", str(slides), "--min-tissue", "1.5", "--out", str(out)]) == 2
    assert not out.exists()
    assert "min_tissue" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["tile", "--bogus"],
    ["tile", "--input", "x", "--out", "y", "--nosection.key=1"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    assert run(argv) == 2


def test_missing_input(tmp_path):
    assert run(["tile", "--input", str(tmp_path / "nope"), "--out", str(tmp_path / "m.jsonl")]) == 2
    assert not (tmp_path / "m.jsonl").exists()


def test_runtime_error_is_1(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"garbage")
    assert run(["tile", "--input", str(tmp_path / "bad.png"), "--out", str(tmp_path / "m.jsonl")]) == 1
    assert not (tmp_path / "m.jsonl").exists()


def test_pipeline(tmp_path, slides):
    m = tmp_path / "m.jsonl"
    assert run(["tile", "--input", str(slides), "--patch-size", "112", "--out", str(m), "--jobs", "2"]) == 0
    manifest = read_manifest(m)
    assert manifest.slide_ids() == [f"s{i}" for i in range(8)]
    assert manifest.config_hash

    tpl = tmp_path / "tpl.json"
    assert run(["stainfit", "--manifest", str(m), "--space", "lab", "--out", str(tpl), "--seed", "1"]) == 0
    tpl_doc = json.loads(tpl.read_text())
    assert tpl_doc["color_space"] == "lab" and len(tpl_doc["channels"]) == 3 and tpl_doc["config_hash"]

    patch = tmp_path / "patch.png"
    Image.fromarray(np.asarray(Image.open(slides / "s0.png"))[:112, :112]).save(patch)
    views = []
    for name in ("v1.png", "v2.png"):
        assert run(["augment", "--in", str(patch), "--template", str(tpl), "--seed", "7",
                    "--out", str(tmp_path / name)]) == 0
        views.append((tmp_path / name).read_bytes())
    assert views[0] == views[1]

    feats = tmp_path / "feats"
    assert run(["embed", "--manifest", str(m), "--encoder", "toy", "--seed", "1", "--dim", "16",
                "--out", str(feats)]) == 0
    es = read_embeddings(feats / "s3.hemb")
    assert es.dim == 16 and es.keys == [r.key for r in manifest.for_slide("s3")]
    side = json.loads((feats / "s3.json").read_text())
    assert side["config_hash"] and side["slide_id"] == "s3"

    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps({f"s{i}": ("a" if i % 2 else "b") for i in range(8)}))
    rep = tmp_path / "mil.json"
    argv = ["mil", "--bags", str(feats), "--labels", str(labels), "--manifest", str(m),
            "--ratios", "0.5,0.25,0.25", "--seed", "1", "--mil.epochs=3", "--mil.hidden", "4",
            "--out", str(rep)]
    assert run(argv) == 0
    first = rep.read_bytes()
    assert run(argv) == 0 and rep.read_bytes() == first
    doc = json.loads(first)
    assert doc["protocol"] == "mil" and doc["split_sizes"] == {"train": 4, "val": 2, "test": 2}
    assert run(["report", "--in", str(rep)]) == 0


def test_probe_with_tagged_splits(tmp_path, slides):
    m, feats = tmp_path / "m.jsonl", tmp_path / "feats"
    assert run(["tile", "--input", str(slides), "--patch-size", "56", "--out", str(m)]) == 0
    assert run(["embed", "--manifest", str(m), "--dim", "8", "--out", str(feats)]) == 0
    manifest = read_manifest(m)
    rows = []
    for i, r in enumerate(manifest.records):
        split = "test" if i % 5 == 0 else "train"
        rows.append({"key": r.key, "slide_id": r.slide_id, "label": int(r.x < 224), "split": split})
    ds = tmp_path / "ds.jsonl"
    ds.write_text("".join(json.dumps(r) + "\n" for r in rows))
    out = tmp_path / "probe.json"
    assert run(["probe", "--features", str(feats), "--dataset", str(ds), "--probe.epochs=5",
                "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    n_train = sum(r["split"] == "train" for r in rows)
    assert doc["split_sizes"]["val"] == max(1, n_train // 10)
    assert doc["split_sizes"]["test"] == sum(r["split"] == "test" for r in rows)


def test_selftest_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["selftest", "--size", "1792", "--seed", "3", "--probe.epochs=5", "--tiling.patch_size=112",
                    "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    assert a == (tmp_path / "b" / "report.json").read_bytes()
    assert json.loads(a)["protocol"] == "linear_probe"
    assert "selftest:" in capsys.readouterr().out


class TestConfig:
    def test_file_and_override_precedence(self, tmp_path):
        cfg_path = tmp_path / "run.ini"
        cfg_path.write_text("[tiling]\npatch_size = 112\nmin_tissue = 0.3\n[run]\nseed = 4\n")
        cfg = RunConfig.load(cfg_path, {"tiling.min_tissue": "0.5"})
        assert cfg["tiling"]["patch_size"] == 112 and cfg["tiling"]["min_tissue"] == 0.5
        assert cfg.seed == 4
        assert RunConfig.load(cfg_path, seed=9).seed == 9

    def test_env_seed_fallback(self, monkeypatch):
        monkeypatch.setenv("PATHBENCH_SEED", "17")
        assert RunConfig.load().seed == 17
        assert RunConfig.load(seed=2).seed == 2
        assert RunConfig.load(overrides={"run.seed": "5"}).seed == 5

    def test_digest_ignores_jobs(self):
        assert RunConfig.load(overrides={"run.jobs": "4"}).digest() == RunConfig.load().digest()
        assert RunConfig.load(seed=1).digest() != RunConfig.load().digest()

    @pytest.mark.parametrize("key, value", [
        ("tiling.min_tissue", "1.5"), ("tiling.patch_size", "zero"), ("augment.space", "hed"),
        ("probe.ratios", "0.5,0.5,0.5"), ("run.jobs", "0"), ("nope.key", "1"),
        ("augment.brightness", "1.0"),
    ])
    def test_invalid(self, key, value):
        with pytest.raises(ConfigError):
            RunConfig.load(overrides={key: value})


def test_atomic_write_leaves_no_temp(tmp_path, monkeypatch):
    target = tmp_path / "x.txt"
    atomic_write_text(target, "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(target, "new")
    assert target.read_text() == "old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.txt"]
