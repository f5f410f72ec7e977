"""Synthetic planted-template corpora for tests and demos.

Each target word is a short template of unit-norm frames. Word recordings
embed the template verbatim plus per-recording Gaussian noise inside an
i.i.d. Gaussian background; distractor recordings are pure background.
Multiple noise levels can be written as separate layers of the same corpus
to compare a clean representation against a degraded one. Transcriptions
carry the word tokens so relevance judging works off the manifest alone.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .feature_store import (
    CorpusManifest,
    FeatureSequence,
    ManifestEntry,
    QuerySpec,
    WordSpan,
    save_manifest,
    save_query_set,
    write_feature_file,
)


def make_planted_corpus(
    out_dir: str | Path,
    *,
    n_words: int = 30,
    queries_per_word: int = 10,
    n_distractors: int = 700,
    dim: int = 16,
    length_range: tuple[int, int] = (50, 200),
    template_len: int = 10,
    noise_sigmas: Mapping[int, float] | None = None,
    frame_rate_hz: float = 49.0,
    rng_seed: int = 0,
) -> tuple[Path, Path]:
    """Write a planted corpus under ``out_dir``; returns (manifest, queries) paths.

    noise_sigmas maps layer -> noise stddev on the planted template block
    (default {0: 0.01}); background frames are shared across layers so the
    layers differ only in how noisy the word signal is.
    """
    if noise_sigmas is None:
        noise_sigmas = {0: 0.01}
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(rng_seed)
    lo, hi = length_range
    if not (1 <= template_len <= lo):
        raise ValueError("template_len must fit in the shortest recording")

    templates = rng.standard_normal((n_words, template_len, dim))
    templates /= np.linalg.norm(templates, axis=2, keepdims=True)
    words = [f"word{w:02d}" for w in range(n_words)]

    entries: list[ManifestEntry] = []
    queries: list[QuerySpec] = []
    rec_index = 0

    def emit(frames_by_layer: Mapping[int, np.ndarray], transcription: str,
             spans: tuple[WordSpan, ...] | None) -> str:
        nonlocal rec_index
        rec_id = f"rec{rec_index:05d}"
        rec_index += 1
        paths = {}
        for layer, frames in frames_by_layer.items():
            fname = f"{rec_id}_l{layer}.qbef"
            write_feature_file(
                FeatureSequence(frames.astype(np.float32), frame_rate_hz, rec_id, layer),
                feat_dir / fname,
            )
            paths[layer] = feat_dir / fname
        entries.append(ManifestEntry(rec_id, transcription, paths, spans))
        return rec_id

    for w, word in enumerate(words):
        for q in range(queries_per_word):
            length = int(rng.integers(lo, hi + 1))
            background = rng.standard_normal((length, dim))
            pos = int(rng.integers(0, length - template_len + 1))
            frames_by_layer = {}
            for layer, sigma in noise_sigmas.items():
                frames = background.copy()
                frames[pos : pos + template_len] = templates[w] + sigma * rng.standard_normal(
                    (template_len, dim)
                )
                frames_by_layer[layer] = frames
            span = WordSpan(word, pos / frame_rate_hz, (pos + template_len) / frame_rate_hz)
            rec_id = emit(frames_by_layer, f"synthetic utterance containing {word}", (span,))
            queries.append(
                QuerySpec(
                    query_id=f"{word}_q{q:02d}",
                    target_word=word,
                    mode="contextual_slice",
                    recording_id=rec_id,
                    span=span,
                )
            )

    for d in range(n_distractors):
        length = int(rng.integers(lo, hi + 1))
        background = rng.standard_normal((length, dim))
        frames_by_layer = {layer: background for layer in noise_sigmas}
        emit(frames_by_layer, f"synthetic filler utterance {d:04d}", None)

    manifest_path = out_dir / "manifest.json"
    queries_path = out_dir / "queries.json"
    save_manifest(CorpusManifest(entries, base_dir=out_dir), manifest_path)
    save_query_set(queries, queries_path)
    return manifest_path, queries_path
