"""Run a pretrained speech encoder over WAV files and dump per-layer frame
embeddings in the QBEF format.

Every hidden state the model exposes is dumped by default (for a 24-layer
wav2vec2-class encoder that is 25 states: index 0 is the pre-transformer
input). Inference runs in eval mode under no-grad, so re-extraction with a
pinned model version is byte-identical. The frame rate is measured from the
model's own downsampling on a one-second probe rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from scipy.io import wavfile

from .feature_writer import write_feature_file

EXPECTED_SAMPLE_RATE = 16_000


class ExtractionError(Exception):
    """Raised for undecodable audio, bad sample rates, or empty inputs."""


@dataclass
class ExtractionJob:
    """One batch-extraction request."""

    wav_paths: list[Path]
    model_id: str
    out_dir: Path
    layers: Sequence[int] | None = None  # None: every exposed hidden state
    batch_size: int = 1
    device: str = "cpu"

    def __post_init__(self) -> None:
        self.wav_paths = [Path(p) for p in self.wav_paths]
        self.out_dir = Path(self.out_dir)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def load_model(model_id: str, device: str = "cpu"):
    """Load a wav2vec2-class encoder in eval mode."""
    from transformers import AutoModel

    model = AutoModel.from_pretrained(model_id)
    model.eval()
    return model.to(device)


def conv_output_length(config, n_samples: int) -> int:
    """Frames the convolutional front-end produces for an input length."""
    length = n_samples
    for kernel, stride in zip(config.conv_kernel, config.conv_stride):
        length = (length - kernel) // stride + 1
    return max(length, 0)


def measure_frame_rate(model, sample_rate: int = EXPECTED_SAMPLE_RATE) -> float:
    """Model's actual output rate: frames produced for a one-second input."""
    return float(conv_output_length(model.config, sample_rate))


def read_wav_mono(path: Path, expected_rate: int = EXPECTED_SAMPLE_RATE) -> np.ndarray:
    """Mono float32 samples in [-1, 1]; rejects non-16 kHz and empty files."""
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ExtractionError(f"{path}: cannot decode WAV: {exc}") from None
    if rate != expected_rate:
        raise ExtractionError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = np.clip(data, -1.0, 1.0)
    else:
        raise ExtractionError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1, dtype=np.float32)
    if samples.size == 0:
        raise ExtractionError(f"{path}: empty audio")
    return np.ascontiguousarray(samples, dtype=np.float32)


def _select_layers(n_states: int, layers: Sequence[int] | None) -> list[int]:
    if layers is None:
        return list(range(n_states))
    bad = [l for l in layers if not 0 <= l < n_states]
    if bad:
        raise ExtractionError(
            f"layer indices {bad} out of range; model exposes 0..{n_states - 1}"
        )
    return list(layers)


def _encode_batch(model, batch: list[np.ndarray], device: str) -> list[tuple]:
    """Hidden states for equal-length samples; returns per-item tuples of layers."""
    stacked = torch.from_numpy(np.stack(batch)).to(device)
    with torch.no_grad():
        out = model(stacked, output_hidden_states=True)
    states = [h.cpu().numpy().astype(np.float32) for h in out.hidden_states]
    return [tuple(h[i] for h in states) for i in range(len(batch))]


def _run_batched(model, samples: list[np.ndarray], batch_size: int, device: str):
    """Yield (input index, per-layer frames) with equal-length batching.

    Only same-length inputs share a batch, so no padding is involved and
    results do not depend on how inputs are grouped. On an out-of-memory
    error the batch is retried at half size before giving up.
    """
    by_length: dict[int, list[int]] = {}
    for idx, s in enumerate(samples):
        by_length.setdefault(s.size, []).append(idx)
    for length in sorted(by_length):
        indices = by_length[length]
        pos = 0
        size = batch_size
        while pos < len(indices):
            chunk = indices[pos : pos + size]
            try:
                encoded = _encode_batch(model, [samples[i] for i in chunk], device)
            except RuntimeError as exc:
                if "out of memory" in str(exc).lower() and size > 1:
                    size = max(1, size // 2)
                    continue
                raise
            for idx, layer_frames in zip(chunk, encoded):
                yield idx, layer_frames
            pos += len(chunk)


def extract(job: ExtractionJob, model=None) -> list[dict]:
    """Encode every WAV and write one feature file per (recording, layer).

    Returns a manifest fragment: one dict per recording with id,
    per-layer feature paths (relative to out_dir), and the audio path.
    Recording ids are the WAV file stems.

    Raises:
        ExtractionError: on undecodable/empty/misrated audio or bad layers;
            nothing is written for the offending file.
    """
    if model is None:
        model = load_model(job.model_id, job.device)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    frame_rate = measure_frame_rate(model)
    samples = [read_wav_mono(path) for path in job.wav_paths]
    for path, s in zip(job.wav_paths, samples):
        if conv_output_length(model.config, s.size) < 1:
            raise ExtractionError(f"{path}: too short to produce a single frame")
    ids = [path.stem for path in job.wav_paths]
    if len(set(ids)) != len(ids):
        raise ExtractionError("duplicate WAV stems would collide as recording ids")
    fragment: list[dict] = [
        {"id": rec_id, "transcription": "", "features": {}, "audio": str(path)}
        for rec_id, path in zip(ids, job.wav_paths)
    ]
    for idx, layer_frames in _run_batched(model, samples, job.batch_size, job.device):
        rec_id = ids[idx]
        selected = _select_layers(len(layer_frames), job.layers)
        for layer in selected:
            fname = f"{rec_id}_l{layer}.qbef"
            write_feature_file(
                layer_frames[layer], frame_rate, rec_id, layer, job.out_dir / fname
            )
            fragment[idx]["features"][str(layer)] = fname
    return fragment


def encode_word_segments(
    job: ExtractionJob,
    queries: list[dict],
    wav_by_recording: dict[str, Path],
    model=None,
) -> list[dict]:
    """Encode excised word audio for word_segment queries.

    Each query dict needs recording_id and span; the sliced audio is encoded
    on its own (no surrounding context) and the returned copies carry a
    per-layer features map pointing at the new files.
    """
    if model is None:
        model = load_model(job.model_id, job.device)
    job.out_dir.mkdir(parents=True, exist_ok=True)
    frame_rate = measure_frame_rate(model)
    updated = []
    for query in queries:
        if query.get("mode") != "word_segment":
            updated.append(dict(query))
            continue
        rec_id = query["recording_id"]
        if rec_id not in wav_by_recording:
            raise ExtractionError(f"query {query['query_id']!r}: no WAV for {rec_id!r}")
        samples = read_wav_mono(wav_by_recording[rec_id])
        span = query["span"]
        lo = int(round(float(span["start_s"]) * EXPECTED_SAMPLE_RATE))
        hi = int(round(float(span["end_s"]) * EXPECTED_SAMPLE_RATE))
        segment = samples[max(lo, 0) : min(hi, samples.size)]
        if conv_output_length(model.config, segment.size) < 1:
            raise ExtractionError(
                f"query {query['query_id']!r}: segment too short to encode"
            )
        (encoded,) = _encode_batch(model, [segment], job.device)
        selected = _select_layers(len(encoded), job.layers)
        features = {}
        for layer in selected:
            fname = f"{query['query_id']}_l{layer}.qbef"
            write_feature_file(
                encoded[layer], frame_rate, query["query_id"], layer,
                job.out_dir / fname,
            )
            features[str(layer)] = fname
        enriched = dict(query)
        enriched["features"] = features
        updated.append(enriched)
    return updated
