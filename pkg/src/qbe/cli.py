"""Command-line entry point.

Subcommands: extract-mfcc, analyze, rogue-dims, search, evaluate,
make-protocol, selftest. Every run writes its primary outputs plus a
run.json provenance record (config, version, input digests) under --out and
touches nothing else. Exit codes: 0 success, 2 usage error, 3 data
validation error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dtw import (
    brute_force_min_cost,
    build_corpus_index,
    load_layer_features,
    search,
    subsequence_dtw_cost,
)
from .errors import QbeError
from .feature_store import (
    CorpusManifest,
    FeatureSequence,
    ManifestEntry,
    layer_key,
    load_manifest,
    load_query_set,
    parse_layer_key,
    read_feature_file,
    save_manifest,
    save_query_set,
    write_feature_file,
)
from .geometry import (
    PairSamplingPlan,
    anisotropy,
    rogue_dimensions,
    similarity_distribution,
)
from .mfcc import MfccConfig, mfcc, read_wav
from .retrieval import build_protocol_corpus, evaluate
from .synth import make_planted_corpus

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

DEFAULT_K_GRID = "1,2,3,5,10,20,50,100"


def _parse_layer(text: str) -> int | None:
    try:
        return parse_layer_key(text)
    except QbeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_layers(text: str) -> list[int | None]:
    layers = [_parse_layer(part) for part in text.split(",") if part.strip()]
    if not layers:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}")
    return layers


def _parse_ks(text: str) -> list[int]:
    ks = [int(part) for part in text.split(",") if part.strip()]
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError(f"bad k list {text!r}")
    return ks


def _default_workers(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("QBE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_record(args: argparse.Namespace, out_dir: Path) -> None:
    config = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k != "func"
    }
    inputs = {}
    for key in ("manifest", "queries", "pool"):
        value = getattr(args, key, None)
        if value and Path(value).is_file():
            inputs[str(value)] = _sha256(Path(value))
    record = {
        "subcommand": args.subcommand,
        "config": config,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "inputs": inputs,
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def _layer_seed(seed: int, layer: int | None) -> int:
    code = 0xFFFF if layer is None else layer
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(code,)).generate_state(1)[0])


def _load_layer_sequences(
    manifest: CorpusManifest, layer: int | None
) -> list[FeatureSequence]:
    return [manifest.features(entry.recording_id, layer) for entry in manifest]


# --- subcommand handlers ------------------------------------------------------


def _cmd_extract_mfcc(args: argparse.Namespace, out_dir: Path) -> None:
    manifest = load_manifest(args.manifest, strict=False)
    cfg = MfccConfig(n_coeffs=args.coeffs, window_s=args.window_ms / 1000.0,
                     hop_s=args.hop_ms / 1000.0)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for entry in manifest:
        if entry.audio_path is None:
            raise QbeError(f"recording {entry.recording_id!r} has no 'audio' path")
        audio = read_wav(entry.audio_path)
        seq = mfcc(audio, cfg, source_id=entry.recording_id)
        path = feat_dir / f"{entry.recording_id}_mfcc.qbef"
        write_feature_file(seq, path)
        feature_paths = dict(entry.feature_paths)
        feature_paths[None] = path
        entries.append(
            ManifestEntry(entry.recording_id, entry.transcription, feature_paths,
                          entry.alignments, entry.audio_path)
        )
    save_manifest(CorpusManifest(entries, base_dir=out_dir), out_dir / "manifest.json")
    print(f"wrote MFCC features for {len(entries)} recordings to {out_dir}")


def _cmd_analyze(args: argparse.Namespace, out_dir: Path) -> None:
    manifest = load_manifest(args.manifest, strict=args.strict)
    hist_rows = []
    for layer in args.layers:
        corpus = _load_layer_sequences(manifest, layer)
        seed = _layer_seed(args.seed, layer)
        report = anisotropy(corpus, PairSamplingPlan(args.n_pairs, "any", seed))
        payload: dict = {
            "layer": layer,
            "anisotropy": report.expected_cosine,
            "any": report.to_dict(),
            "same_recording": None,
            "different_recording": None,
        }
        try:
            same, diff = similarity_distribution(
                corpus,
                PairSamplingPlan(args.n_pairs, "same_recording", seed),
                PairSamplingPlan(args.n_pairs, "different_recording", seed),
            )
            payload["same_recording"] = same.to_dict()
            payload["different_recording"] = diff.to_dict()
        except QbeError as exc:
            payload["stratum_note"] = str(exc)
        out_path = out_dir / f"analyze_layer_{layer_key(layer)}.json"
        out_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        for lo, hi, count in report.histogram:
            hist_rows.append((layer_key(layer), lo, hi, count))
        print(f"layer {layer_key(layer)}: anisotropy={report.expected_cosine:.4f} "
              f"(1-E[cos]={report.one_minus_expected_cosine:.4f})")
    if args.hist_csv:
        with open(out_dir / "histograms.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "bin_lower", "bin_upper", "count"])
            writer.writerows(hist_rows)


def _cmd_rogue_dims(args: argparse.Namespace, out_dir: Path) -> None:
    manifest = load_manifest(args.manifest, strict=args.strict)
    reports = []
    for layer in args.layers:
        corpus = _load_layer_sequences(manifest, layer)
        reports.append(rogue_dimensions(corpus, layer))
    (out_dir / "rogue_dimensions.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8"
    )
    with open(out_dir / "rogue_dimensions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["layer", "max_mean", "argmax_dim", "std_of_max_dim",
             "second_max_mean", "median_of_means"]
        )
        for r in reports:
            writer.writerow(
                [layer_key(r.layer), r.max_mean, r.argmax_dim, r.std_of_max_dim,
                 r.second_max_mean, r.median_of_means]
            )
    for r in reports:
        print(f"layer {layer_key(r.layer)}: max_mean={r.max_mean:.4g} at dim "
              f"{r.argmax_dim}, second={r.second_max_mean:.4g}")


def _cmd_search(args: argparse.Namespace, out_dir: Path) -> None:
    manifest = load_manifest(args.manifest, strict=args.strict)
    queries = load_query_set(args.queries)
    layer = args.layer
    features = load_layer_features(manifest, layer)
    index = build_corpus_index(manifest, layer, features)
    out_path = out_dir / "results.jsonl"
    with open(out_path, "w", encoding="utf-8") as fh:
        for query in queries:
            results = search(
                manifest, query, layer, top_k=args.top_k, index=index, features=features
            )
            for rank, result in enumerate(results, start=1):
                rate = features[result.recording_id].frame_rate_hz
                fh.write(
                    json.dumps(
                        {
                            "query_id": result.query_id,
                            "rank": rank,
                            "recording_id": result.recording_id,
                            "normalized_cost": result.normalized_cost,
                            "match_start_s": result.match_span[0] / rate,
                            "match_end_s": result.match_span[1] / rate,
                        }
                    )
                    + "\n"
                )
    print(f"wrote {out_path}")


def _cmd_evaluate(args: argparse.Namespace, out_dir: Path) -> None:
    manifest = load_manifest(args.manifest, strict=args.strict)
    queries = load_query_set(args.queries)
    result = evaluate(
        manifest, queries, args.layers, args.k, workers=_default_workers(args.workers)
    )
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "k", "precision", "recall", "f1", "n_queries"])
        for m in result.metrics:
            writer.writerow(
                [layer_key(m.layer), m.k, m.precision_at_k, m.recall_at_k,
                 m.f1_at_k, m.n_queries]
            )
    summary = {
        "best_layer_per_k": {
            str(k): layer_key(layer) for k, layer in result.best_layer_per_k.items()
        },
        "average_over_layers_per_k": {
            str(k): dict(zip(("precision", "recall", "f1"), result.average_over_layers(k)))
            for k in args.k
        },
        "skipped_query_ids": list(result.skipped_query_ids),
        "n_truncated_rankings": len(result.truncated_pairs),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    if args.fig2_grid:
        with open(out_dir / "precision_grid.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "k", "precision"])
            for m in result.metrics:
                writer.writerow([layer_key(m.layer), m.k, m.precision_at_k])
    for k, layer in result.best_layer_per_k.items():
        best = result.metric(layer, k)
        print(f"k={k}: best layer {layer_key(layer)} "
              f"(P={best.precision_at_k:.3f} R={best.recall_at_k:.3f} F1={best.f1_at_k:.3f})")


def _cmd_make_protocol(args: argparse.Namespace, out_dir: Path) -> None:
    if args.pool:
        pool = load_manifest(args.pool, strict=args.strict)
        corpus, queries = build_protocol_corpus(
            pool, args.words, args.queries_per_word, args.distractors, args.seed
        )
        save_manifest(corpus, out_dir / "manifest.json")
        save_query_set(queries, out_dir / "queries.json")
        print(f"selected {len(corpus)} recordings and {len(queries)} queries from pool")
    else:
        sigmas = {}
        for part in args.noise.split(","):
            key, _, value = part.partition(":")
            sigmas[int(key)] = float(value)
        manifest_path, queries_path = make_planted_corpus(
            out_dir,
            n_words=args.words,
            queries_per_word=args.queries_per_word,
            n_distractors=args.distractors,
            dim=args.dim,
            length_range=(args.min_len, args.max_len),
            template_len=args.template_len,
            noise_sigmas=sigmas,
            rng_seed=args.seed,
        )
        print(f"wrote {manifest_path} and {queries_path}")


def _cmd_selftest(args: argparse.Namespace, out_dir: Path) -> None:
    rng = np.random.default_rng(args.seed)
    checks: list[tuple[str, bool, str]] = []

    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 6))
        costs = rng.uniform(0, 2, size=(n, m))
        worst = max(worst, abs(subsequence_dtw_cost(costs) - brute_force_min_cost(costs)))
    checks.append(("dtw_oracle_200_matrices", worst < 1e-9, f"worst |delta|={worst:.2e}"))

    from .geometry import PairSamplingPlan as Plan

    v = rng.standard_normal(16).astype(np.float32)
    const_corpus = [
        FeatureSequence(np.tile(v, (8, 1)), 49.0, f"r{i}", 0) for i in range(3)
    ]
    rep = anisotropy(const_corpus, Plan(200, "any", args.seed))
    checks.append(
        ("constant_corpus_expected_cosine_one", abs(rep.expected_cosine - 1.0) < 1e-6,
         f"expected_cosine={rep.expected_cosine:.6f}")
    )

    iso = [FeatureSequence(rng.standard_normal((400, 64)).astype(np.float32), 49.0, "iso", 0)]
    rep = anisotropy(iso, Plan(1000, "any", args.seed))
    checks.append(
        ("isotropic_corpus_expected_cosine_near_zero", abs(rep.expected_cosine) < 0.1,
         f"expected_cosine={rep.expected_cosine:.4f}")
    )

    ok = True
    for i in range(10):
        frames = rng.standard_normal((int(rng.integers(1, 30)), int(rng.integers(1, 8))))
        seq = FeatureSequence(frames.astype(np.float32), 49.0, f"rt{i}", None)
        path = out_dir / "roundtrip.qbef"
        write_feature_file(seq, path)
        ok = ok and read_feature_file(path).frames.tobytes() == seq.frames.tobytes()
    checks.append(("format_round_trip_10_sequences", ok, ""))

    (out_dir / "selftest.json").write_text(
        json.dumps(
            [{"check": name, "passed": passed, "detail": detail}
             for name, passed, detail in checks],
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    failed = [name for name, passed, _ in checks if not passed]
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name} {detail}")
    if failed:
        raise RuntimeError(f"selftest failures: {', '.join(failed)}")


# --- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbe",
        description="Query-by-example spoken term detection over frame embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
        if manifest:
            p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=None,
                       help="worker count (env QBE_WORKERS, then CPU count)")
        p.add_argument("--strict", action="store_true",
                       help="validate all feature files up front")

    p = sub.add_parser("extract-mfcc", help="compute MFCC features for a WAV manifest")
    common(p)
    p.add_argument("--coeffs", type=int, default=13)
    p.add_argument("--window-ms", type=float, default=25.0)
    p.add_argument("--hop-ms", type=float, default=10.0)
    p.set_defaults(func=_cmd_extract_mfcc)

    p = sub.add_parser("analyze", help="anisotropy and similarity distributions per layer")
    common(p)
    p.add_argument("--layers", type=_parse_layers, required=True)
    p.add_argument("--n-pairs", type=int, default=1000)
    p.add_argument("--hist-csv", action="store_true", help="also dump histograms.csv")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("rogue-dims", help="per-dimension mean statistics per layer")
    common(p)
    p.add_argument("--layers", type=_parse_layers, required=True)
    p.set_defaults(func=_cmd_rogue_dims)

    p = sub.add_parser("search", help="rank recordings by subsequence-DTW match cost")
    common(p)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--layer", type=_parse_layer, required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("evaluate", help="Precision@k / Recall@k / F1 per layer")
    common(p)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--layers", type=_parse_layers, required=True)
    p.add_argument("--k", type=_parse_ks, default=_parse_ks(DEFAULT_K_GRID))
    p.add_argument("--fig2-grid", action="store_true",
                   help="also dump the full layer x k precision grid")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("make-protocol", help="synthesize a planted corpus, or select "
                                             "a protocol subset from a labeled pool")
    common(p, manifest=False)
    p.add_argument("--pool", type=Path, default=None,
                   help="labeled pool manifest; omit to synthesize")
    p.add_argument("--words", type=int, default=30)
    p.add_argument("--queries-per-word", type=int, default=10)
    p.add_argument("--distractors", type=int, default=700)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--min-len", type=int, default=50)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--template-len", type=int, default=10)
    p.add_argument("--noise", default="0:0.01",
                   help="layer:sigma pairs, e.g. 0:0.01,1:0.5")
    p.set_defaults(func=_cmd_make_protocol)

    p = sub.add_parser("selftest", help="run the DTW oracle suite and sanity checks")
    common(p, manifest=False)
    p.set_defaults(func=_cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_run_record(args, out_dir)
        args.func(args, out_dir)
    except QbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 4
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
