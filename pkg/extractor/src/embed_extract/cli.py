"""CLI for the extraction harness.

`extract` encodes WAVs into per-layer QBEF feature files plus a manifest;
`import-alignments` merges forced-alignment word spans (TextGrid dir or one
JSON file) into an existing manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .alignments import (
    AlignmentError,
    import_alignments,
    load_alignments_json,
    parse_textgrid_words,
)
from .extraction import ExtractionError, ExtractionJob, encode_word_segments, extract


def _parse_layers(text: str):
    if text.strip().lower() == "all":
        return None
    return [int(part) for part in text.split(",") if part.strip()]


def _cmd_extract(args: argparse.Namespace) -> None:
    wavs = sorted(Path(args.wavs).glob("*.wav"))
    if not wavs:
        raise ExtractionError(f"no .wav files under {args.wavs}")
    job = ExtractionJob(
        wav_paths=wavs,
        model_id=args.model,
        out_dir=Path(args.out),
        layers=_parse_layers(args.layers),
        batch_size=args.batch_size,
        device=args.device,
    )
    from .extraction import load_model

    model = load_model(args.model, args.device)
    fragment = extract(job, model=model)
    if args.word_queries:
        queries = json.loads(Path(args.word_queries).read_text(encoding="utf-8"))
        wav_by_rec = {p.stem: p for p in wavs}
        queries = encode_word_segments(job, queries, wav_by_rec, model=model)
        out_queries = Path(args.out) / "queries.json"
        out_queries.write_text(json.dumps(queries, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out_queries}")
    manifest_path = Path(args.out) / "manifest.json"
    manifest_path.write_text(
        json.dumps({"recordings": fragment}, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {manifest_path} ({len(fragment)} recordings)")


def _cmd_import_alignments(args: argparse.Namespace) -> None:
    manifest_path = Path(args.manifest)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if args.textgrids:
        alignments = {}
        for tg in sorted(Path(args.textgrids).glob("*.TextGrid")):
            alignments[tg.stem] = parse_textgrid_words(tg, tier=args.tier)
        if not alignments:
            raise AlignmentError(f"no .TextGrid files under {args.textgrids}")
    else:
        alignments = load_alignments_json(args.json)
    merged = import_alignments(alignments, manifest, manifest_dir=manifest_path.parent)
    out_path = Path(args.out) if args.out else manifest_path
    out_path.write_text(json.dumps(merged, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out_path} ({len(alignments)} recordings updated)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-extract")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("extract", help="dump per-layer embeddings for a WAV directory")
    p.add_argument("--model", required=True,
                   help="model id or local path (e.g. facebook/wav2vec2-large-xlsr-53)")
    p.add_argument("--wavs", required=True, help="directory of 16 kHz .wav files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layers", default="all", help="'all' or comma-separated indices")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--device", default="cpu")
    p.add_argument("--word-queries", default=None,
                   help="query-set JSON whose word_segment queries get encoded")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("import-alignments", help="merge word spans into a manifest")
    p.add_argument("--manifest", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--textgrids", help="directory of .TextGrid files")
    group.add_argument("--json", help="JSON alignments file")
    p.add_argument("--tier", default="words")
    p.add_argument("--out", default=None, help="output manifest (default: in place)")
    p.set_defaults(func=_cmd_import_alignments)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ExtractionError, AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
