"""``pathbench`` command line: tile -> stainfit/augment -> embed -> probe/mil -> report.

Exit status: 0 on success, 2 on invalid arguments or configuration (nothing is
written), 1 on runtime failure.
"""

from __future__ import annotations

import argparse
import io
import json
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .augment import StainTemplate, augment_view, fit_stain_template
from .config import ConfigError, RunConfig, parse_classes, parse_ratios
from .embed import (EmbeddingSet, assemble_bags, bag_from_embeddings, read_embedding_dir,
                    toy_encode, write_embeddings)
from .evaluation import (EvalReport, emit_report, holdout_val, load_report, render_report,
                         split_dataset, train_linear_probe, train_mil)
from .io_utils import atomic_write_bytes, atomic_write_text
from .rng import Rng
from .slide_io import find_slides, open_slide, read_region, resolve_slide
from .synthetic import CLASS_NAMES, patch_class, synthetic_slide
from .tissue import (PatchManifest, build_manifest, merge_manifests, read_manifest,
                     sample_unique, write_manifest)


class _Parser(argparse.ArgumentParser):
    """Collects ``--section.key=value`` overrides that argparse would reject."""

    def parse_args(self, args=None, namespace=None):
        ns, extra = self.parse_known_args(args, namespace)
        overrides, i = {}, 0
        while i < len(extra):
            tok = extra[i]
            if tok.startswith("--") and "." in tok.split("=", 1)[0]:
                if "=" in tok:
                    k, v = tok[2:].split("=", 1)
                elif i + 1 < len(extra):
                    k, v = tok[2:], extra[i + 1]
                    i += 1
                else:
                    self.error(f"missing value for {tok}")
                overrides[k] = v
            else:
                self.error(f"unrecognized arguments: {tok}")
            i += 1
        ns.overrides = overrides
        return ns


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI-style run configuration")
    p.add_argument("--seed", type=int, help="global seed (fallback: $PATHBENCH_SEED)")
    p.add_argument("--jobs", type=int, help="worker threads")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pathbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_common()]

    p = sub.add_parser("tile", parents=common, help="Otsu-filtered patch manifest")
    p.add_argument("--input", type=Path, required=True, help="slide file, pyramid dir, or dir of slides")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--min-tissue", type=float)
    p.add_argument("--thumbnail-max-dim", type=int)
    p.add_argument("--level", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("stainfit", parents=common, help="fit a stain template over manifest patches")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--slides", type=Path, help="slide directory (default: paths in the manifest)")
    p.add_argument("--space", choices=("lab", "hsv"))
    p.add_argument("--max-patches", type=int)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("augment", parents=common, help="write one augmented view of a patch")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--template", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("embed", parents=common, help="encode manifest patches to .hemb files")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--slides", type=Path)
    p.add_argument("--encoder", choices=("toy",))
    p.add_argument("--dim", type=int)
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("probe", parents=common, help="linear-probe benchmark")
    p.add_argument("--features", type=Path, required=True, help="directory of .hemb files")
    p.add_argument("--dataset", type=Path, required=True, help="JSON-lines {key, slide_id?, label, split?}")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("mil", parents=common, help="attention-MIL slide benchmark")
    p.add_argument("--bags", type=Path, required=True, help="directory of .hemb files, one per slide")
    p.add_argument("--labels", type=Path, required=True, help="JSON {slide_id: class}")
    p.add_argument("--manifest", type=Path, help="restrict bags to manifest patches")
    p.add_argument("--ratios")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("report", parents=common, help="validate and summarize report files")
    p.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True)

    p = sub.add_parser("selftest", parents=common, help="synthetic end-to-end run")
    p.add_argument("--out", type=Path, help="keep artifacts here (default: temporary dir)")
    p.add_argument("--size", type=int, default=4096, help="synthetic slide side in pixels")
    return parser


_FLAG_KEYS = {
    "patch_size": "tiling.patch_size", "min_tissue": "tiling.min_tissue",
    "thumbnail_max_dim": "tiling.thumbnail_max_dim", "level": "tiling.level",
    "space": "augment.space", "max_patches": "augment.max_patches",
    "encoder": "embed.encoder", "dim": "embed.dim", "jobs": "run.jobs",
}


def _load_config(args) -> RunConfig:
    overrides = dict(args.overrides)
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = str(val)
    if getattr(args, "ratios", None):
        overrides["mil.ratios"] = args.ratios
    return RunConfig.load(args.config, overrides, args.seed)


def _require(*paths: Path) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{p}: not found")


def _pool(jobs: int, fn, items):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _slide_path(manifest: PatchManifest, slides: Path | None, slide_id: str) -> Path:
    if slides is not None:
        return resolve_slide(slides, slide_id)
    if slide_id not in manifest.sources:
        raise ValueError(f"manifest has no source path for slide {slide_id!r}; pass --slides")
    return Path(manifest.sources[slide_id])


# -- subcommands -------------------------------------------------------------------

def cmd_tile(args, cfg: RunConfig) -> int:
    _require(args.input)
    tcfg = cfg.tiling()
    paths = find_slides(args.input)
    if not paths:
        raise ConfigError(f"{args.input}: no slides found")
    digest = cfg.digest()
    parts = _pool(cfg.jobs, lambda p: build_manifest(open_slide(p), tcfg, digest), paths)
    manifest = merge_manifests(parts)
    write_manifest(manifest, args.out)
    print(f"tile: {len(paths)} slide(s), kept {len(manifest)} of {manifest.n_grid} patches -> {args.out}")
    return 0


def _patch_images(manifest: PatchManifest, records, slides: Path | None):
    cache = {}
    for r in records:
        if r.slide_id not in cache:
            cache[r.slide_id] = open_slide(_slide_path(manifest, slides, r.slide_id))
        yield read_region(cache[r.slide_id], r.level, r.x, r.y, r.size, r.size)


def cmd_stainfit(args, cfg: RunConfig) -> int:
    _require(args.manifest, args.slides)
    manifest = read_manifest(args.manifest)
    if not manifest.records:
        raise ConfigError(f"{args.manifest}: manifest has no patches")
    n = min(cfg["augment"]["max_patches"], len(manifest))
    records = sample_unique(manifest, n, cfg.seed)
    tpl = fit_stain_template(_patch_images(manifest, records, args.slides), cfg["augment"]["space"])
    tpl.config_hash = cfg.digest()
    tpl.save(args.out)
    print(f"stainfit: fitted {tpl.color_space} template on {tpl.n_fitted} patches -> {args.out}")
    return 0


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def _png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def cmd_augment(args, cfg: RunConfig) -> int:
    _require(args.input, args.template)
    tpl = StainTemplate.load(args.template) if args.template else None
    acfg = cfg.augment(tpl)
    img = _read_png(args.input)
    if img.shape[0] != img.shape[1]:
        raise ConfigError(f"{args.input}: augment needs a square patch, got {img.shape[1]}x{img.shape[0]}")
    view = augment_view(img, acfg, Rng(cfg.seed))
    atomic_write_bytes(args.out, _png_bytes(view))
    print(f"augment: seed {cfg.seed} -> {args.out}")
    return 0


def embed_manifest(manifest: PatchManifest, slides: Path | None, out: Path, cfg: RunConfig) -> list[Path]:
    seed, dim, digest = cfg.seed, cfg["embed"]["dim"], cfg.digest()

    def one(slide_id: str) -> Path:
        records = manifest.for_slide(slide_id)
        feats = np.stack([toy_encode(p, seed, dim) for p in _patch_images(manifest, records, slides)])
        es = EmbeddingSet(slide_id, [r.key for r in records], feats)
        path = out / f"{slide_id}.hemb"
        write_embeddings(es, path, meta={"encoder": "toy", "seed": seed, "config_hash": digest,
                                         "manifest_config_hash": manifest.config_hash})
        return path

    return _pool(cfg.jobs, one, manifest.slide_ids())


def cmd_embed(args, cfg: RunConfig) -> int:
    _require(args.manifest, args.slides)
    manifest = read_manifest(args.manifest)
    paths = embed_manifest(manifest, args.slides, args.out, cfg)
    print(f"embed: {len(manifest)} patches in {len(paths)} file(s) -> {args.out}")
    return 0


def _class_index(raw_labels: list, configured: list[str]) -> tuple[list[int], list[str]]:
    if all(isinstance(v, int) and not isinstance(v, bool) for v in raw_labels):
        names = configured or [str(i) for i in range(max(raw_labels) + 1)]
        return list(raw_labels), names
    names = configured or sorted({str(v) for v in raw_labels})
    lookup = {n: i for i, n in enumerate(names)}
    try:
        return [lookup[str(v)] for v in raw_labels], names
    except KeyError as exc:
        raise ConfigError(f"label {exc.args[0]!r} is not among classes {names}") from None


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except ValueError:
                raise ConfigError(f"{path}:{n}: invalid JSON") from None
    return rows


def cmd_probe(args, cfg: RunConfig) -> int:
    _require(args.features, args.dataset)
    rows = _read_jsonl(args.dataset)
    if not rows or any("key" not in r or "label" not in r for r in rows):
        raise ConfigError(f"{args.dataset}: every row needs 'key' and 'label'")
    sets = read_embedding_dir(args.features)
    if not sets:
        raise ConfigError(f"{args.features}: no .hemb files")
    report = run_probe(rows, sets, cfg)
    emit_report(report, args.out)
    print(f"probe: top-1 {report.metrics['top1_accuracy']:.4f} (best epoch {report.best_epoch}) -> {args.out}")
    return 0


def run_probe(rows: list[dict], sets: dict[str, EmbeddingSet], cfg: RunConfig) -> EvalReport:
    labels, names = _class_index([r["label"] for r in rows], parse_classes(cfg["probe"]["classes"]))
    x = np.empty((len(rows), next(iter(sets.values())).dim), dtype=np.float64)
    for i, r in enumerate(rows):
        if "slide_id" in r:
            es = sets.get(str(r["slide_id"]))
            if es is None:
                raise ValueError(f"no embeddings for slide {r['slide_id']!r}")
        else:
            owners = [s for s in sets.values() if r["key"] in s.keys]
            if len(owners) != 1:
                raise ValueError(f"key {r['key']!r} found in {len(owners)} files; add slide_id")
            es = owners[0]
        if es.dim != x.shape[1]:
            raise ValueError(f"dim mismatch: {es.slide_id!r} has {es.dim}, expected {x.shape[1]}")
        x[i] = es.matrix[es.row(str(r["key"]))]
    y = np.asarray(labels)

    tags = [r.get("split") for r in rows]
    if any(t is not None for t in tags):
        idx = {s: [i for i, t in enumerate(tags) if t == s] for s in ("train", "val", "test")}
        if not idx["test"] or not idx["train"]:
            raise ConfigError("dataset splits need train and test rows")
        if not idx["val"]:
            tr, va = holdout_val(len(idx["train"]), cfg["probe"]["val_frac"], cfg.seed)
            idx["val"] = [idx["train"][i] for i in va]
            idx["train"] = [idx["train"][i] for i in tr]
    else:
        sp = split_dataset(y, parse_ratios(cfg["probe"]["ratios"]), cfg.seed, stratify=True)
        idx = {"train": sp.train, "val": sp.val, "test": sp.test}
    for name in ("train", "val", "test"):
        if not idx[name]:
            raise ConfigError(f"{name} split is empty; add data or adjust probe.ratios")
    pcfg = cfg.probe(n_classes=len(names))
    _, report = train_linear_probe((x[idx["train"]], y[idx["train"]]), (x[idx["val"]], y[idx["val"]]),
                                   (x[idx["test"]], y[idx["test"]]), pcfg, cfg.digest())
    report.extra = {"classes": names}
    return report


def cmd_mil(args, cfg: RunConfig) -> int:
    _require(args.bags, args.labels, args.manifest)
    raw = json.loads(args.labels.read_text())
    if not isinstance(raw, dict) or not raw:
        raise ConfigError(f"{args.labels}: expected a non-empty {{slide_id: class}} object")
    sets = read_embedding_dir(args.bags)
    missing = sorted(set(raw) - set(sets))
    if missing:
        raise ConfigError(f"labels reference slides without embeddings: {missing[:5]}")
    slide_ids = sorted(raw)
    idx, names = _class_index([raw[s] for s in slide_ids], parse_classes(cfg["mil"]["classes"]))
    label_of = dict(zip(slide_ids, idx))
    if args.manifest is not None:
        manifest = read_manifest(args.manifest)
        bags = assemble_bags(manifest, sets, label_of)
    else:
        bags = [bag_from_embeddings(sets[s], label_of[s]) for s in slide_ids]
    y = [b.label for b in bags]
    sp = split_dataset(y, parse_ratios(cfg["mil"]["ratios"]), cfg.seed,
                       stratify=cfg["mil"]["stratify"], n_classes=len(names))
    pick = lambda ids: [bags[i] for i in ids]  # noqa: E731
    _, report = train_mil(pick(sp.train), pick(sp.val), pick(sp.test), cfg.mil(len(names)), cfg.digest())
    report.extra = {"classes": names}
    emit_report(report, args.out)
    print(f"mil: macro AUC {report.metrics['macro_auc']:.4f} (best epoch {report.best_epoch}) -> {args.out}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    _require(*args.inputs)
    for path in args.inputs:
        rep = load_report(path)
        shown = ", ".join(f"{k}={v:.4f}" for k, v in sorted(rep.metrics.items()))
        print(f"{path}: {rep.protocol} seed={rep.seed} best_epoch={rep.best_epoch}/{rep.epochs} "
              f"sizes={rep.split_sizes} {shown}")
    return 0


def cmd_selftest(args, cfg: RunConfig) -> int:
    if args.size < 224 or args.size % 8:
        raise ConfigError("--size must be a multiple of 8 and at least 224")
    root = args.out or Path(tempfile.mkdtemp(prefix="pathbench-selftest-"))
    try:
        t0 = time.perf_counter()
        img, class_map = synthetic_slide(args.size, cfg.seed)
        slide_path = root / "slides" / "synthetic.png"
        slide_path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        Image.fromarray(img).save(buf, format="PNG", compress_level=1)
        atomic_write_bytes(slide_path, buf.getvalue())
        del img, buf
        t1 = time.perf_counter()

        manifest = build_manifest(open_slide(slide_path), cfg.tiling(), cfg.digest())
        write_manifest(manifest, root / "manifest.jsonl")
        t2 = time.perf_counter()

        embed_manifest(manifest, None, root / "feats", cfg)
        rows = []
        for r in manifest.records:
            c = patch_class(class_map, 8, r.x, r.y, r.size)
            if c:
                rows.append({"key": r.key, "slide_id": r.slide_id, "label": CLASS_NAMES[c]})
        atomic_write_text(root / "dataset.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
        t3 = time.perf_counter()

        report = run_probe(rows, read_embedding_dir(root / "feats"), cfg)
        emit_report(report, root / "report.json")
        load_report(root / "report.json")  # schema check of what was written
        t4 = time.perf_counter()
    finally:
        if args.out is None:
            shutil.rmtree(root, ignore_errors=True)

    print(render_report(report), end="")
    print(f"selftest: slide {t1 - t0:.2f}s, tile {t2 - t1:.2f}s ({len(manifest)}/{manifest.n_grid} patches), "
          f"embed {t3 - t2:.2f}s, probe {t4 - t3:.2f}s, total {t4 - t0:.2f}s")
    return 0


COMMANDS = {
    "tile": cmd_tile, "stainfit": cmd_stainfit, "augment": cmd_augment, "embed": cmd_embed,
    "probe": cmd_probe, "mil": cmd_mil, "report": cmd_report, "selftest": cmd_selftest,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) or usage errors (2)
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"pathbench {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"pathbench {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
