"""On-disk feature format, corpus manifests, and time-span slicing.

Feature files are a small binary container (magic ``QBEF``) holding one
recording's frame matrix as little-endian float32, row-major. Manifests are
JSON indexes of recordings with transcriptions, per-layer feature paths and
optional word-alignment spans. Both are immutable after load and safe to
share across threads.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    EmptySliceError,
    FeatureFileError,
    ManifestError,
    MissingFeatureFileError,
    NonFiniteValuesError,
    QueryResolutionError,
    SpanOutOfRangeError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MAGIC = b"QBEF"
FORMAT_VERSION = 1

# Guards time->frame conversion against float noise at exact frame boundaries
# (e.g. (7/49)*49 == 6.999...). Span times are nowhere near this resolution.
_INDEX_EPS = 1e-9

QUERY_MODES = ("standalone_file", "word_segment", "contextual_slice")


@dataclass(frozen=True)
class FeatureSequence:
    """One recording (or query) as a time-ordered matrix of frame vectors.

    frames has shape (n_frames, dim), dtype float32. layer is None for
    representations without a layer axis (e.g. MFCC).
    """

    frames: np.ndarray
    frame_rate_hz: float
    source_id: str
    layer: int | None = None

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be at least 1x1, got {frames.shape}")
        if not np.isfinite(frames).all():
            raise NonFiniteValuesError(
                f"sequence {self.source_id!r} contains NaN/Inf values"
            )
        if not self.frame_rate_hz > 0:
            raise ValueError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")
        if self.layer is not None and self.layer < 0:
            raise ValueError(f"layer must be >= 0 or None, got {self.layer}")
        frames = np.ascontiguousarray(frames)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        # the file header stores the rate as f32; quantize here so the
        # write->read round trip is the identity
        object.__setattr__(self, "frame_rate_hz", float(np.float32(self.frame_rate_hz)))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.frame_rate_hz


@dataclass(frozen=True, order=True)
class WordSpan:
    """A word token with its time span inside one recording, end exclusive."""

    word: str = field(compare=False)
    start_s: float
    end_s: float

    def __post_init__(self) -> None:
        if self.start_s < 0:
            raise ManifestError(f"span for {self.word!r}: start_s {self.start_s} < 0")
        if not self.end_s > self.start_s:
            raise ManifestError(
                f"span for {self.word!r}: end_s {self.end_s} <= start_s {self.start_s}"
            )


@dataclass(frozen=True)
class QuerySpec:
    """A target word plus where its frames come from.

    mode selects the resolution path:
      standalone_file  -- ``path`` points at a single feature file
      word_segment     -- per-layer feature files in ``feature_paths``
      contextual_slice -- slice of ``recording_id``'s full-utterance features
                          at ``span`` (requires the manifest)
    """

    query_id: str
    target_word: str
    mode: str
    path: Path | None = None
    recording_id: str | None = None
    span: WordSpan | None = None
    feature_paths: Mapping[int | None, Path] | None = None

    def __post_init__(self) -> None:
        if self.mode not in QUERY_MODES:
            raise ManifestError(f"query {self.query_id!r}: unknown mode {self.mode!r}")
        if self.mode == "standalone_file":
            if self.path is None:
                raise ManifestError(f"query {self.query_id!r}: standalone_file needs a path")
        else:
            if self.recording_id is None or self.span is None:
                raise ManifestError(
                    f"query {self.query_id!r}: mode {self.mode} needs recording_id and span"
                )


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    transcription: str
    feature_paths: Mapping[int | None, Path]
    alignments: tuple[WordSpan, ...] | None = None
    audio_path: Path | None = None


class CorpusManifest:
    """Immutable index of recordings; feature files load lazily on access."""

    def __init__(self, entries: Sequence[ManifestEntry], base_dir: Path | None = None):
        self.entries: tuple[ManifestEntry, ...] = tuple(entries)
        self.base_dir = base_dir
        self._by_id: dict[str, ManifestEntry] = {}
        for entry in self.entries:
            if entry.recording_id in self._by_id:
                raise ManifestError(f"duplicate recording_id {entry.recording_id!r}")
            self._by_id[entry.recording_id] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def __getitem__(self, recording_id: str) -> ManifestEntry:
        try:
            return self._by_id[recording_id]
        except KeyError:
            raise ManifestError(f"unknown recording_id {recording_id!r}") from None

    def __contains__(self, recording_id: str) -> bool:
        return recording_id in self._by_id

    def recording_ids(self) -> tuple[str, ...]:
        return tuple(e.recording_id for e in self.entries)

    def feature_path(self, recording_id: str, layer: int | None) -> Path:
        entry = self[recording_id]
        try:
            return entry.feature_paths[layer]
        except KeyError:
            raise ManifestError(
                f"recording {recording_id!r} has no features at layer {layer!r}"
            ) from None

    def features(self, recording_id: str, layer: int | None) -> FeatureSequence:
        """Load one recording's features, checking the file matches the entry."""
        path = self.feature_path(recording_id, layer)
        seq = read_feature_file(path)
        if seq.source_id != recording_id:
            raise ManifestError(
                f"feature file {path} declares source_id {seq.source_id!r}, "
                f"manifest says {recording_id!r}"
            )
        return seq

    def validate_features(self) -> None:
        """Eagerly load and check every referenced feature file (strict mode)."""
        for entry in self.entries:
            for layer in entry.feature_paths:
                self.features(entry.recording_id, layer)


# --- binary feature file ---------------------------------------------------

_FIXED_HEADER = struct.Struct("<4sHHfII")  # magic, version, reserved, rate, n_frames, dim


def write_feature_file(seq: FeatureSequence, path: str | Path) -> None:
    """Write ``seq`` to ``path`` in the bit-exact QBEF container format.

    Raises:
        NonFiniteValuesError: if the frames contain NaN/Inf.
        OSError: on I/O failure.
    """
    frames = np.ascontiguousarray(seq.frames, dtype=np.float32)
    if not np.isfinite(frames).all():
        raise NonFiniteValuesError(f"refusing to write non-finite frames for {seq.source_id!r}")
    source = seq.source_id.encode("utf-8")
    if len(source) > 0xFFFF:
        raise FeatureFileError(f"source_id too long ({len(source)} bytes)")
    layer = -1 if seq.layer is None else seq.layer
    header = _FIXED_HEADER.pack(
        MAGIC, FORMAT_VERSION, 0, float(seq.frame_rate_hz),
        seq.n_frames, seq.dim,
    )
    payload = frames.astype("<f4", copy=False).tobytes()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<H", len(source)))
        fh.write(source)
        fh.write(struct.pack("<h", layer))
        fh.write(payload)


def _read_exact(fh, count: int, what: str, path: Path) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFileError(f"{path}: truncated while reading {what}")
    return data


def read_feature_file(path: str | Path) -> FeatureSequence:
    """Read a QBEF feature file back into a FeatureSequence.

    Raises a distinct error per failure: MissingFeatureFileError,
    BadMagicError, UnsupportedVersionError, TruncatedFileError,
    NonFiniteValuesError.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFeatureFileError(f"feature file not found: {path}")
    with open(path, "rb") as fh:
        head = _read_exact(fh, _FIXED_HEADER.size, "header", path)
        magic, version, _reserved, rate, n_frames, dim = _FIXED_HEADER.unpack(head)
        if magic != MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(
                f"{path}: format version {version}, expected {FORMAT_VERSION}"
            )
        (source_len,) = struct.unpack("<H", _read_exact(fh, 2, "source_id length", path))
        source_id = _read_exact(fh, source_len, "source_id", path).decode("utf-8")
        (layer_raw,) = struct.unpack("<h", _read_exact(fh, 2, "layer", path))
        payload = _read_exact(fh, n_frames * dim * 4, "payload", path)
        if fh.read(1):
            raise FeatureFileError(f"{path}: trailing bytes after payload")
    if n_frames < 1 or dim < 1:
        raise FeatureFileError(f"{path}: empty matrix ({n_frames}x{dim})")
    if not rate > 0 or not math.isfinite(rate):
        raise FeatureFileError(f"{path}: invalid frame_rate_hz {rate}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim)
    if not np.isfinite(frames).all():
        raise NonFiniteValuesError(f"{path}: payload contains NaN/Inf")
    layer = None if layer_raw < 0 else int(layer_raw)
    return FeatureSequence(frames, float(rate), source_id, layer)


# --- span slicing ------------------------------------------------------------


def span_to_frame_range(
    span: WordSpan, frame_rate_hz: float, n_frames: int
) -> tuple[int, int]:
    """Convert a time span to a clamped [start, end) frame index range.

    start = floor(start_s * rate), end = ceil(end_s * rate); never drops
    audio inside the span.
    """
    start = int(math.floor(span.start_s * frame_rate_hz + _INDEX_EPS))
    end = int(math.ceil(span.end_s * frame_rate_hz - _INDEX_EPS))
    start = max(0, min(start, n_frames))
    end = max(0, min(end, n_frames))
    return start, end


def slice_by_span(seq: FeatureSequence, span: WordSpan) -> FeatureSequence:
    """Extract the frames covering ``span`` from a full-utterance sequence.

    Raises:
        SpanOutOfRangeError: span extends more than one frame past the end.
        EmptySliceError: span rounds to zero frames.
    """
    slack = 1.0 / seq.frame_rate_hz
    if span.end_s > seq.duration_s + slack + _INDEX_EPS:
        raise SpanOutOfRangeError(
            f"span [{span.start_s}, {span.end_s})s for {span.word!r} exceeds "
            f"{seq.source_id!r} duration {seq.duration_s:.3f}s"
        )
    start, end = span_to_frame_range(span, seq.frame_rate_hz, seq.n_frames)
    if end <= start:
        raise EmptySliceError(
            f"span [{span.start_s}, {span.end_s})s for {span.word!r} is shorter "
            f"than one frame at {seq.frame_rate_hz} Hz"
        )
    return FeatureSequence(
        seq.frames[start:end], seq.frame_rate_hz, seq.source_id, seq.layer
    )


# --- manifest / query-set JSON ----------------------------------------------


def layer_key(layer: int | None) -> str:
    return "none" if layer is None else str(layer)


def parse_layer_key(key: str) -> int | None:
    key = key.strip().lower()
    if key in ("none", "mfcc", "-1"):
        return None
    try:
        layer = int(key)
    except ValueError:
        raise ManifestError(f"bad layer key {key!r}") from None
    if layer < 0:
        raise ManifestError(f"bad layer key {key!r}")
    return layer


def _parse_span(obj: dict) -> WordSpan:
    try:
        return WordSpan(str(obj["word"]), float(obj["start_s"]), float(obj["end_s"]))
    except KeyError as exc:
        raise ManifestError(f"alignment span missing field {exc}") from None


def _validate_spans(recording_id: str, spans: Sequence[WordSpan]) -> tuple[WordSpan, ...]:
    ordered = tuple(sorted(spans, key=lambda s: s.start_s))
    for a, b in zip(ordered, ordered[1:]):
        if b.start_s < a.end_s:
            raise ManifestError(
                f"recording {recording_id!r}: spans {a.word!r} and {b.word!r} overlap"
            )
    return ordered


def load_manifest(path: str | Path, strict: bool = False) -> CorpusManifest:
    """Load and validate a corpus manifest.

    Structural invariants (unique ids, span ordering) are checked eagerly;
    feature files are checked lazily on access unless ``strict`` is set.
    """
    path = Path(path)
    base = path.parent
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("recordings"), list):
        raise ManifestError(f"manifest {path} must be an object with a 'recordings' list")
    entries = []
    for rec in data["recordings"]:
        try:
            recording_id = str(rec["id"])
            transcription = str(rec["transcription"])
            features_raw = rec["features"]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest entry missing field: {exc}") from None
        feature_paths = {
            parse_layer_key(k): base / v for k, v in features_raw.items()
        }
        alignments = None
        if rec.get("alignments") is not None:
            spans = [_parse_span(s) for s in rec["alignments"]]
            alignments = _validate_spans(recording_id, spans)
        audio = base / rec["audio"] if rec.get("audio") else None
        entries.append(
            ManifestEntry(recording_id, transcription, feature_paths, alignments, audio)
        )
    manifest = CorpusManifest(entries, base_dir=base)
    if strict:
        manifest.validate_features()
    return manifest


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """Write a manifest as JSON with feature paths relative to its directory."""
    path = Path(path)
    base = path.parent
    recordings = []
    for entry in manifest.entries:
        rec: dict = {
            "id": entry.recording_id,
            "transcription": entry.transcription,
            "features": {
                layer_key(layer): _relative_str(p, base)
                for layer, p in sorted(
                    entry.feature_paths.items(), key=lambda kv: layer_key(kv[0])
                )
            },
        }
        if entry.alignments is not None:
            rec["alignments"] = [
                {"word": s.word, "start_s": s.start_s, "end_s": s.end_s}
                for s in entry.alignments
            ]
        if entry.audio_path is not None:
            rec["audio"] = _relative_str(entry.audio_path, base)
        recordings.append(rec)
    path.write_text(
        json.dumps({"recordings": recordings}, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _relative_str(p: Path, base: Path) -> str:
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)


def load_query_set(path: str | Path) -> list[QuerySpec]:
    """Load a JSON list of query specs; relative paths resolve against the file."""
    path = Path(path)
    base = path.parent
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"query set not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"query set {path} is not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise ManifestError(f"query set {path} must be a JSON list")
    queries = []
    for obj in data:
        try:
            query_id = str(obj["query_id"])
            target_word = str(obj["target_word"])
            mode = str(obj["mode"])
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"query object missing field: {exc}") from None
        span = _parse_span(obj["span"]) if obj.get("span") else None
        feature_paths = None
        if obj.get("features"):
            feature_paths = {
                parse_layer_key(k): base / v for k, v in obj["features"].items()
            }
        queries.append(
            QuerySpec(
                query_id=query_id,
                target_word=target_word,
                mode=mode,
                path=base / obj["path"] if obj.get("path") else None,
                recording_id=obj.get("recording_id"),
                span=span,
                feature_paths=feature_paths,
            )
        )
    seen: set[str] = set()
    for q in queries:
        if q.query_id in seen:
            raise ManifestError(f"duplicate query_id {q.query_id!r}")
        seen.add(q.query_id)
    return queries


def save_query_set(queries: Sequence[QuerySpec], path: str | Path) -> None:
    path = Path(path)
    base = path.parent
    out = []
    for q in queries:
        obj: dict = {"query_id": q.query_id, "target_word": q.target_word, "mode": q.mode}
        if q.path is not None:
            obj["path"] = _relative_str(q.path, base)
        if q.recording_id is not None:
            obj["recording_id"] = q.recording_id
        if q.span is not None:
            obj["span"] = {"word": q.span.word, "start_s": q.span.start_s, "end_s": q.span.end_s}
        if q.feature_paths:
            obj["features"] = {
                layer_key(layer): _relative_str(p, base)
                for layer, p in sorted(q.feature_paths.items(), key=lambda kv: layer_key(kv[0]))
            }
        out.append(obj)
    path.write_text(json.dumps(out, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def resolve_query(
    manifest: CorpusManifest | None, query: QuerySpec, layer: int | None
) -> FeatureSequence:
    """Resolve a QuerySpec to its frames for the requested layer.

    standalone_file reads the one file as-is; word_segment reads the
    per-layer segment file; contextual_slice loads the source recording's
    full-utterance features from the manifest and slices by span.
    """
    if query.mode == "standalone_file":
        assert query.path is not None
        return read_feature_file(query.path)
    if query.mode == "word_segment":
        if not query.feature_paths or layer not in query.feature_paths:
            raise QueryResolutionError(
                f"query {query.query_id!r}: no word-segment feature file for layer {layer!r}"
            )
        return read_feature_file(query.feature_paths[layer])
    # contextual_slice
    if manifest is None or query.recording_id not in manifest:
        raise QueryResolutionError(
            f"query {query.query_id!r}: source recording {query.recording_id!r} "
            f"not in manifest"
        )
    assert query.span is not None
    full = manifest.features(query.recording_id, layer)
    return slice_by_span(full, query.span)
