"""Unified command-line entry point.

Subcommands: ingest, features, codebook, train, sample, simulate, word-cv,
pca, serve, report. All randomness flows from a single --seed; every stage
is re-runnable and deterministic given (inputs, config, seed).
Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, ingest, llp, page_features, word_features
from .config import ToolConfig, config_as_dict, load_config
from .errors import FontIdError, NoStrokesError
from .sampler import Strategy, select_batch

log = logging.getLogger("fontid")


class UsageError(Exception):
    """Raised instead of argparse's SystemExit so we control the exit code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fontid", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML config file (flags override it)")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="validate a manifest and filter noisy word boxes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--hocr-dir", help="convert a directory of .hocr files into the manifest first")
    p.add_argument("--image-dir", help="image directory paired with --hocr-dir")
    p.add_argument("--out", help="write the filtered manifest here")

    p = sub.add_parser("features", help="extract per-word features to CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output CSV (default: <output_dir>/word_features.csv)")
    p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("codebook", help="build the k-means codebook from word features")
    p.add_argument("--features", required=True, help="word-features CSV from `features`")
    p.add_argument("--out", help="codebook JSON path")
    p.add_argument("--k", type=int)

    p = sub.add_parser("train", help="train the page classifier from labeled pages")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", help="model JSON path")

    p = sub.add_parser("sample", help="select the next query batch and print it")
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--strategy")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="run the synthetic active-learning protocol")
    p.add_argument("--strategy", action="append", help="repeatable; default: all strategies")
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("word-cv", help="word-level cross-validated accuracy")
    p.add_argument("--features", choices=sorted(harness.FEATURE_SUBSETS), default="ALL")
    p.add_argument("--features-csv", help="labeled word features; omit to use synthetic data")
    p.add_argument("--manifest", help="manifest supplying page labels for --features-csv")

    p = sub.add_parser("pca", help="project page BoFs onto 2 principal components")
    p.add_argument("--features", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", help="output CSV")

    p = sub.add_parser("serve", help="start the labeling service")
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")

    p = sub.add_parser("report", help="render CSV results into the HTML report")
    p.add_argument("--results", required=True, help="directory written by `simulate`")
    return parser


def main(argv: list[str] | None = None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        handler = {
            "ingest": _cmd_ingest,
            "features": _cmd_features,
            "codebook": _cmd_codebook,
            "train": _cmd_train,
            "sample": _cmd_sample,
            "simulate": _cmd_simulate,
            "word-cv": _cmd_word_cv,
            "pca": _cmd_pca,
            "serve": _cmd_serve,
            "report": _cmd_report,
        }[args.command]
        return handler(args, cfg)
    except (FontIdError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # pragma: no cover - internal failures
        logging.exception("internal error")
        return 2


# ---------------------------------------------------------------------------
# helpers


def _out_dir(cfg: ToolConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: ToolConfig, out_dir: Path) -> None:
    (out_dir / "effective_config.json").write_text(
        json.dumps(config_as_dict(cfg), indent=1, sort_keys=True), encoding="utf-8"
    )


def cache_dir_for(cfg: ToolConfig) -> Path:
    override = os.environ.get("FONTID_CACHE_DIR")
    return Path(override if override else cfg.cache_dir)


def _feature_params(cfg: ToolConfig) -> dict:
    return {
        "target_height": cfg.target_height,
        "median_window": cfg.median_window,
        "canny_low": cfg.canny_low,
        "canny_high": cfg.canny_high,
        "schema": page_features.feature_schema_hash(),
    }


def _page_cache_key(image_bytes: bytes, words_desc: str, params: dict) -> str:
    h = hashlib.sha256()
    h.update(image_bytes)
    h.update(words_desc.encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()


def extract_page_features(page: ingest.PageRecord, cfg: ToolConfig) -> tuple[list[tuple[int, np.ndarray]], int]:
    """(word_index, feature) rows for one page, plus a dropped-word count."""
    image = ingest.load_page_image(page.image_path)
    h, w = image.shape
    filtered = ingest.filter_word_boxes(page, w, h)
    rows = []
    dropped = 0
    for idx, box in enumerate(filtered.words):
        crop = ingest.crop_word(image, box)
        prepped = word_features.preprocess_word(crop, cfg.target_height, cfg.median_window)
        try:
            feats = word_features.extract_word_features(prepped, max(1, box.char_count))
        except NoStrokesError:
            dropped += 1
            continue
        rows.append((idx, feats))
    return rows, dropped


def cache_features(manifest: str, cfg: ToolConfig) -> tuple[list[tuple[str, int, np.ndarray]], dict]:
    """Per-page word features with content-hash caching.

    A page's cache key covers its image bytes, word boxes, and the feature
    parameters, so any change recomputes. Returns (rows, stats) where stats
    counts cache hits, misses, and skipped pages.
    """
    pages = ingest.load_dataset(manifest)
    cdir = cache_dir_for(cfg)
    cdir.mkdir(parents=True, exist_ok=True)
    params = _feature_params(cfg)
    all_rows: list[tuple[str, int, np.ndarray]] = []
    stats = {"hits": 0, "misses": 0, "skipped": 0}
    for page in pages:
        try:
            image_bytes = Path(page.image_path).read_bytes()
        except OSError as exc:
            log.warning("skipping page %s: %s", page.page_id, exc)
            stats["skipped"] += 1
            continue
        words_desc = json.dumps([ingest.page_to_manifest_entry(page)["words"]])
        key = _page_cache_key(image_bytes, words_desc, params)
        cache_file = cdir / f"{key}.csv"
        if cache_file.exists():
            stats["hits"] += 1
            with cache_file.open(newline="", encoding="utf-8") as fh:
                for row in csv.reader(fh):
                    all_rows.append((page.page_id, int(row[0]), np.array(row[1:], dtype=np.float64)))
            continue
        stats["misses"] += 1
        try:
            rows, dropped = extract_page_features(page, cfg)
        except (OSError, FontIdError) as exc:
            log.warning("skipping page %s: %s", page.page_id, exc)
            stats["skipped"] += 1
            continue
        if dropped:
            log.info("page %s: dropped %d strokeless words", page.page_id, dropped)
        with cache_file.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for idx, feats in rows:
                writer.writerow([idx] + [repr(float(v)) for v in feats])
        for idx, feats in rows:
            all_rows.append((page.page_id, idx, feats))
    return all_rows, stats


FEATURES_CSV_HEADER = ["page_id", "word_index", *word_features.FEATURE_NAMES]


def _read_features_csv(path: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Returns (page_ids per row, word indices, feature matrix)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FEATURES_CSV_HEADER:
            raise FontIdError(f"{path}: unexpected feature CSV header")
        ids, widx, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            widx.append(int(row[1]))
            rows.append(np.array(row[2:], dtype=np.float64))
    feats = np.vstack(rows) if rows else np.empty((0, word_features.N_FEATURES))
    return ids, np.array(widx, dtype=int), feats


def _page_bofs_from_rows(ids: list[str], feats: np.ndarray, cb) -> tuple[list[str], np.ndarray]:
    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, pid in enumerate(ids):
        if pid not in groups:
            groups[pid] = []
            order.append(pid)
        groups[pid].append(i)
    bofs = np.vstack([page_features.page_bof(feats[groups[pid]], cb) for pid in order])
    return order, bofs


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args, cfg: ToolConfig) -> int:
    manifest = args.manifest
    if args.hocr_dir:
        if not args.image_dir:
            raise FontIdError("--hocr-dir requires --image-dir")
        records = []
        for hocr in sorted(Path(args.hocr_dir).glob("*.hocr")):
            words = ingest.hocr_to_words(hocr.read_text(encoding="utf-8"))
            image = Path(args.image_dir) / (hocr.stem + ".png")
            records.append(
                ingest.PageRecord(page_id=hocr.stem, image_path=str(image), words=words)
            )
        ingest.save_dataset(records, manifest)
        print(f"wrote manifest with {len(records)} pages to {manifest}")
    pages = ingest.load_dataset(manifest)
    total_in = sum(len(p.words) for p in pages)
    filtered = []
    for page in pages:
        image = ingest.load_page_image(page.image_path)
        h, w = image.shape
        filtered.append(ingest.filter_word_boxes(page, w, h))
    total_out = sum(len(p.words) for p in filtered)
    print(f"{len(pages)} pages; {total_in} word boxes in, {total_out} after filtering")
    if args.out:
        ingest.save_dataset(filtered, args.out)
        print(f"filtered manifest written to {args.out}")
    return 0


def _cmd_features(args, cfg: ToolConfig) -> int:
    if not Path(args.manifest).exists():
        raise FontIdError(f"manifest not found: {args.manifest}")
    out_path = Path(args.out) if args.out else _out_dir(cfg) / "word_features.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.no_cache:
        rows = []
        stats = {"hits": 0, "misses": 0, "skipped": 0}
        for page in ingest.load_dataset(args.manifest):
            page_rows, _ = extract_page_features(page, cfg)
            rows.extend((page.page_id, idx, f) for idx, f in page_rows)
    else:
        rows, stats = cache_features(args.manifest, cfg)
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURES_CSV_HEADER)
        for pid, idx, feats in rows:
            writer.writerow([pid, idx] + [repr(float(v)) for v in feats])
    print(
        f"wrote {len(rows)} word rows to {out_path} "
        f"(cache hits={stats['hits']} misses={stats['misses']} skipped={stats['skipped']})"
    )
    return 0 if stats["skipped"] == 0 else 0


def _cmd_codebook(args, cfg: ToolConfig) -> int:
    _, _, feats = _read_features_csv(args.features)
    k = args.k if args.k else cfg.k
    cb = page_features.build_codebook(feats, k=k, seed=cfg.seed)
    out = Path(args.out) if args.out else Path(cfg.codebook_path)
    cb.save(out)
    print(f"codebook k={k} built from {feats.shape[0]} words in {cb.n_iter} iterations -> {out}")
    return 0


def _labels_by_page(manifest: str) -> dict[str, int]:
    out = {}
    for page in ingest.load_dataset(manifest):
        if page.label is not None:
            out[page.page_id] = ingest.CLASSES.index(page.label)
    return out


def _cmd_train(args, cfg: ToolConfig) -> int:
    ids, _, feats = _read_features_csv(args.features)
    cb = page_features.Codebook.load(args.codebook)
    page_ids, bofs = _page_bofs_from_rows(ids, feats, cb)
    labels = _labels_by_page(args.manifest)
    labeled_mask = np.array([pid in labels for pid in page_ids])
    y = np.array([labels.get(pid, -1) for pid in page_ids])
    model = llp.train_llp(
        bofs[labeled_mask],
        y[labeled_mask],
        bofs[~labeled_mask],
        sigma=cfg.sigma,
        lambda_weight=cfg.lambda_weight,
        max_iter=cfg.llp_max_iter,
        grad_tol=cfg.llp_grad_tol,
    )
    model.codebook_hash = page_features.feature_schema_hash()
    out = Path(args.out) if args.out else Path(cfg.model_path)
    model.save(out)
    print(
        f"trained on {int(labeled_mask.sum())} labeled / {int((~labeled_mask).sum())} unlabeled "
        f"pages ({model.n_iter} iterations, loss {model.final_loss:.4f}) -> {out}"
    )
    return 0


def _cmd_sample(args, cfg: ToolConfig) -> int:
    ids, _, feats = _read_features_csv(args.features)
    cb = page_features.Codebook.load(args.codebook)
    page_ids, bofs = _page_bofs_from_rows(ids, feats, cb)
    model = llp.LlpModel.load(args.model)
    labels = _labels_by_page(args.manifest)
    labeled_idx = np.array([i for i, pid in enumerate(page_ids) if pid in labels], dtype=int)
    unlabeled_idx = np.array([i for i, pid in enumerate(page_ids) if pid not in labels], dtype=int)
    strategy = Strategy.parse(args.strategy if args.strategy else cfg.strategy)
    s = llp.similarity_matrix(bofs, cfg.sigma)
    batch = select_batch(
        strategy, model, unlabeled_idx, labeled_idx, s, bofs,
        batch_size=args.batch_size if args.batch_size else cfg.batch_size,
        rng=np.random.default_rng(cfg.seed),
    )
    records = [
        {
            "page_id": page_ids[p.index],
            "uncertainty": p.h,
            "dissimilarity": p.d,
            "diversity": p.d_prime,
            "total": p.total,
        }
        for p in batch.picks
    ]
    if args.format == "json":
        print(json.dumps({"strategy": strategy.value, "batch": records}, indent=1))
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(["page_id", "uncertainty", "dissimilarity", "diversity", "total"])
        for r in records:
            writer.writerow([
                r["page_id"],
                repr(r["uncertainty"]),
                repr(r["dissimilarity"]),
                "" if r["diversity"] is None else repr(r["diversity"]),
                "" if r["total"] is None else repr(r["total"]),
            ])
    return 0


def _strategies_from_args(args) -> tuple[Strategy, ...]:
    if not args.strategy:
        return harness.STRATEGY_ORDER
    return tuple(Strategy.parse(s) for s in args.strategy)


def _cmd_simulate(args, cfg: ToolConfig) -> int:
    strategies = _strategies_from_args(args)
    exp = harness.synthetic_protocol_config(
        seed=cfg.seed,
        strategies=strategies,
        batch_size=cfg.batch_size,
        repetitions=args.reps if args.reps else cfg.repetitions,
        sigma=cfg.harness_sigma,
        lambda_weight=cfg.harness_lambda,
        test_per_class=cfg.test_per_class,
        seed_per_class=cfg.seed_per_class,
        llp_max_iter=cfg.harness_max_iter,
        synthetic_class_counts=cfg.synthetic_class_counts,
        synthetic_concentration=cfg.synthetic_concentration,
    )
    bofs, labels = harness.synthetic_protocol_dataset(exp)
    results = harness.run_protocol(exp, bofs, labels, n_jobs=cfg.n_jobs)
    out = Path(args.out) if args.out else _out_dir(cfg)
    paths = harness.emit_report(results, out)
    _echo_config(cfg, out)
    for strategy, result in results.items():
        print(f"{strategy.value}: mean normalized AUC {result.naucs.mean():.4f}")
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_word_cv(args, cfg: ToolConfig) -> int:
    if args.features_csv:
        if not args.manifest:
            raise FontIdError("--features-csv requires --manifest for page labels")
        ids, _, feats = _read_features_csv(args.features_csv)
        labels_map = _labels_by_page(args.manifest)
        keep, y = [], []
        for i, pid in enumerate(ids):
            cls = labels_map.get(pid)
            if cls is not None and cls in (0, 1):  # Blackletter vs Roman words only
                keep.append(i)
                y.append(cls)
        x = feats[keep]
        y = np.array(y, dtype=int)
    else:
        rng = np.random.default_rng(cfg.seed)
        x, y = harness.synthetic_word_features(500, rng)
    acc = harness.word_level_cv(x, y, feature_subset=args.features)
    print(f"{args.features} ({len(harness.FEATURE_SUBSETS[args.features])} features): "
          f"5-fold CV accuracy {acc:.4f} on {x.shape[0]} words")
    return 0


def _cmd_pca(args, cfg: ToolConfig) -> int:
    ids, _, feats = _read_features_csv(args.features)
    cb = page_features.Codebook.load(args.codebook)
    page_ids, bofs = _page_bofs_from_rows(ids, feats, cb)
    result = harness.pca_projection(bofs)
    out = Path(args.out) if args.out else _out_dir(cfg) / "pca.csv"
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["page_id", "pc1", "pc2"])
        for pid, (a, b) in zip(page_ids, result.coords):
            writer.writerow([pid, repr(float(a)), repr(float(b))])
    print(f"wrote {len(page_ids)} projections to {out}")
    return 0


def _cmd_serve(args, cfg: ToolConfig) -> int:
    import uvicorn

    from .service import build_service

    app = build_service(cfg)
    port = args.port if args.port else cfg.port
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


def _cmd_report(args, cfg: ToolConfig) -> int:
    results_dir = Path(args.results)
    curves_csv = results_dir / "learning_curves.csv"
    if not curves_csv.exists():
        raise FontIdError(f"no learning_curves.csv under {results_dir}")
    rows: dict[tuple[str, int], list[tuple[int, float]]] = {}
    with curves_csv.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for strategy, rep, count, acc in reader:
            rows.setdefault((strategy, int(rep)), []).append((int(count), float(acc)))
    by_strategy: dict[Strategy, list[harness.LearningCurve]] = {}
    for (sname, rep), pts in sorted(rows.items()):
        strat = Strategy.parse(sname)
        pts.sort()
        by_strategy.setdefault(strat, []).append(
            harness.LearningCurve(
                np.array([p[0] for p in pts]), np.array([p[1] for p in pts]), strat, rep
            )
        )
    results = {s: harness.RepeatedResult(strategy=s, curves=cs) for s, cs in by_strategy.items()}
    paths = harness.emit_report(results, results_dir)
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


if __name__ == "__main__":
    sys.exit(main())
