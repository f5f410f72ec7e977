"""Forced-alignment ingestion: Praat TextGrid word tiers (Montreal Forced
Aligner output) or a plain JSON mapping, merged into a corpus manifest as
word spans.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from scipy.io import wavfile


class AlignmentError(Exception):
    """Raised for unparsable tiers, unknown recordings, or invalid spans."""


_FLOAT_RE = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"
_ITEM_RE = re.compile(r"item\s*\[\d+\]\s*:", re.IGNORECASE)
_CLASS_RE = re.compile(r'class\s*=\s*"([^"]*)"')
_NAME_RE = re.compile(r'name\s*=\s*"([^"]*)"')
_INTERVAL_RE = re.compile(
    rf'intervals\s*\[\d+\]\s*:\s*xmin\s*=\s*({_FLOAT_RE})\s*'
    rf'xmax\s*=\s*({_FLOAT_RE})\s*text\s*=\s*"([^"]*)"',
    re.IGNORECASE,
)

# markers MFA and friends use for non-speech intervals
_NON_SPEECH = {"", "sil", "sp", "spn", "<eps>", "''", '""'}


def parse_textgrid_words(path: str | Path, tier: str = "words") -> list[dict]:
    """Word intervals from a long-format TextGrid's named interval tier.

    Returns [{"word", "start_s", "end_s"}, ...] skipping non-speech markers.
    """
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    blocks = _ITEM_RE.split(text)
    for block in blocks[1:]:
        class_match = _CLASS_RE.search(block)
        name_match = _NAME_RE.search(block)
        if not class_match or not name_match:
            continue
        if class_match.group(1) != "IntervalTier" or name_match.group(1) != tier:
            continue
        spans = []
        for xmin, xmax, word in _INTERVAL_RE.findall(block):
            word = word.strip()
            if word.lower() in _NON_SPEECH:
                continue
            spans.append({"word": word, "start_s": float(xmin), "end_s": float(xmax)})
        return spans
    raise AlignmentError(f"{path}: no IntervalTier named {tier!r}")


def load_alignments_json(path: str | Path) -> dict[str, list[dict]]:
    """JSON alignments: {recording_id: [{"word","start_s","end_s"}, ...]}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise AlignmentError(f"{path}: expected an object keyed by recording id")
    return {str(k): list(v) for k, v in data.items()}


def _validate_spans(rec_id: str, spans: list[dict], duration_s: float | None) -> list[dict]:
    for span in spans:
        if float(span["end_s"]) <= float(span["start_s"]) or float(span["start_s"]) < 0:
            raise AlignmentError(
                f"{rec_id}: bad span [{span['start_s']}, {span['end_s']}) "
                f"for {span['word']!r}"
            )
        if duration_s is not None and float(span["end_s"]) > duration_s + 1e-6:
            raise AlignmentError(
                f"{rec_id}: span for {span['word']!r} ends at {span['end_s']}s, "
                f"past audio duration {duration_s:.3f}s"
            )
    ordered = sorted(spans, key=lambda s: float(s["start_s"]))
    for a, b in zip(ordered, ordered[1:]):
        if float(b["start_s"]) < float(a["end_s"]):
            raise AlignmentError(
                f"{rec_id}: spans {a['word']!r} and {b['word']!r} overlap"
            )
    return ordered


def _wav_duration_s(path: Path) -> float | None:
    try:
        rate, data = wavfile.read(str(path))
    except Exception:
        return None
    return data.shape[0] / rate


def import_alignments(
    alignments_by_recording: dict[str, list[dict]],
    manifest: dict,
    manifest_dir: Path | None = None,
) -> dict:
    """Merge word spans into a manifest dict (feature-store JSON schema).

    Spans are sorted and validated (ordering, overlap, and duration when the
    recording's audio is available).

    Raises:
        AlignmentError: for unknown recording ids or invalid spans.
    """
    recordings = {rec["id"]: rec for rec in manifest.get("recordings", [])}
    unknown = sorted(set(alignments_by_recording) - set(recordings))
    if unknown:
        raise AlignmentError(f"alignments reference unknown recordings: {unknown}")
    merged = {"recordings": []}
    for rec in manifest["recordings"]:
        rec = dict(rec)
        if rec["id"] in alignments_by_recording:
            duration = None
            if rec.get("audio"):
                audio_path = Path(rec["audio"])
                if manifest_dir is not None and not audio_path.is_absolute():
                    audio_path = manifest_dir / audio_path
                duration = _wav_duration_s(audio_path)
            rec["alignments"] = _validate_spans(
                rec["id"], alignments_by_recording[rec["id"]], duration
            )
        merged["recordings"].append(rec)
    return merged


def build_query_spec(
    query_id: str,
    word: str,
    recording_id: str,
    start_s: float,
    end_s: float,
    mode: str = "word_segment",
) -> dict:
    """QuerySpec dict for a word occurrence at a known span (pass-through)."""
    return {
        "query_id": query_id,
        "target_word": word,
        "mode": mode,
        "recording_id": recording_id,
        "span": {"word": word, "start_s": start_s, "end_s": end_s},
    }
