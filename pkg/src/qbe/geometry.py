"""Representation-space geometry: anisotropy, similarity distributions,
rogue-dimension statistics.

The anisotropy score is the expected cosine similarity between randomly
sampled distinct frame pairs; both the expectation and its complement
(1 - expectation) are reported because the two orientations circulate in the
literature. Sampling is exactly uniform within the requested stratum, with
replacement across pairs, never pairing a frame with itself, and derives
independent per-stratum substreams from one seed so results cannot depend on
scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyCorpusError, UnsatisfiableStratumError, ZeroNormError
from .feature_store import FeatureSequence

STRATA = ("any", "same_recording", "different_recording")
_STRATUM_CODE = {name: i for i, name in enumerate(STRATA)}

DEFAULT_N_BINS = 80


@dataclass(frozen=True)
class PairSamplingPlan:
    """How to draw frame pairs: count, stratum, and RNG seed."""

    n_pairs: int = 1000
    stratum: str = "any"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_pairs < 1:
            raise ValueError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if self.stratum not in STRATA:
            raise ValueError(f"stratum must be one of {STRATA}, got {self.stratum!r}")


@dataclass(frozen=True)
class AnisotropyReport:
    """Cosine-similarity statistics over sampled frame pairs for one layer."""

    layer: int | None
    n_pairs: int
    expected_cosine: float
    one_minus_expected_cosine: float
    median_cos: float
    iqr_cos: float
    histogram: tuple[tuple[float, float, int], ...]
    stratum: str = "any"

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "stratum": self.stratum,
            "n_pairs": self.n_pairs,
            "expected_cosine": self.expected_cosine,
            "one_minus_expected_cosine": self.one_minus_expected_cosine,
            "median_cos": self.median_cos,
            "iqr_cos": self.iqr_cos,
            "histogram": [list(b) for b in self.histogram],
        }


@dataclass(frozen=True)
class RogueDimensionReport:
    """Per-dimension mean statistics exposing dominant (rogue) dimensions."""

    layer: int | None
    max_mean: float
    argmax_dim: int
    std_of_max_dim: float
    second_max_mean: float
    median_of_means: float

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "max_mean": self.max_mean,
            "argmax_dim": self.argmax_dim,
            "std_of_max_dim": self.std_of_max_dim,
            "second_max_mean": self.second_max_mean,
            "median_of_means": self.median_of_means,
        }


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Raises:
        ZeroNormError: if either vector has zero norm (never silently 0).
        ValueError: on dimension mismatch.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine undefined for zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _pool_frames(corpus: Sequence[FeatureSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack all frames (float64, unit-normalized) with per-sequence lengths."""
    if not corpus:
        raise EmptyCorpusError("no sequences in corpus")
    dims = {seq.dim for seq in corpus}
    if len(dims) != 1:
        raise ValueError(f"mixed frame dimensions in corpus: {sorted(dims)}")
    frames = np.concatenate([seq.frames for seq in corpus]).astype(np.float64)
    norms = np.linalg.norm(frames, axis=1)
    if (norms == 0.0).any():
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise ZeroNormError(f"zero-norm frame at pooled index {idx}")
    frames /= norms[:, None]
    lengths = np.array([seq.n_frames for seq in corpus], dtype=np.int64)
    return frames, lengths


def _stratum_rng(plan: PairSamplingPlan) -> np.random.Generator:
    # independent substream per stratum so both halves of a distribution
    # comparison can share one seed
    seq = np.random.SeedSequence(entropy=plan.rng_seed, spawn_key=(_STRATUM_CODE[plan.stratum],))
    return np.random.default_rng(seq)


def _sample_pairs(
    lengths: np.ndarray, plan: PairSamplingPlan
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (i, j) frame-index pairs within the stratum, i never equal to j."""
    rng = _stratum_rng(plan)
    total = int(lengths.sum())
    offsets = np.concatenate(([0], np.cumsum(lengths)))
    k = plan.n_pairs
    if plan.stratum == "any":
        if total < 2:
            raise UnsatisfiableStratumError("stratum 'any' needs at least 2 frames")
        i = rng.integers(0, total, size=k)
        j = rng.integers(0, total - 1, size=k)
        j[j >= i] += 1
    elif plan.stratum == "same_recording":
        weights = lengths.astype(np.float64) * (lengths - 1)
        if weights.sum() == 0:
            raise UnsatisfiableStratumError(
                "stratum 'same_recording' needs a recording with >= 2 frames"
            )
        rec = rng.choice(len(lengths), size=k, p=weights / weights.sum())
        n_r = lengths[rec]
        a = rng.integers(0, n_r)
        b = rng.integers(0, n_r - 1)
        b[b >= a] += 1
        i = offsets[rec] + a
        j = offsets[rec] + b
    else:  # different_recording
        if len(lengths) < 2:
            raise UnsatisfiableStratumError(
                "stratum 'different_recording' needs at least 2 recordings"
            )
        weights = lengths.astype(np.float64) * (total - lengths)
        rec = rng.choice(len(lengths), size=k, p=weights / weights.sum())
        n_r = lengths[rec]
        i = offsets[rec] + rng.integers(0, n_r)
        jj = rng.integers(0, total - n_r)
        j = np.where(jj < offsets[rec], jj, jj + n_r)
    return i, j


def _histogram(cos: np.ndarray, n_bins: int) -> tuple[tuple[float, float, int], ...]:
    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(cos, bins=edges)
    return tuple(
        (float(edges[b]), float(edges[b + 1]), int(counts[b])) for b in range(n_bins)
    )


def anisotropy(
    corpus: Sequence[FeatureSequence],
    plan: PairSamplingPlan,
    *,
    layer: int | None = None,
    n_bins: int = DEFAULT_N_BINS,
) -> AnisotropyReport:
    """Estimate the expected pairwise cosine over sampled frame pairs.

    Deterministic given (corpus, plan): identical inputs produce bit-identical
    reports.
    """
    frames, lengths = _pool_frames(corpus)
    i, j = _sample_pairs(lengths, plan)
    cos = np.einsum("ij,ij->i", frames[i], frames[j])
    np.clip(cos, -1.0, 1.0, out=cos)
    expected = float(cos.mean())
    q25, q50, q75 = np.quantile(cos, [0.25, 0.5, 0.75])
    if layer is None:
        layers = {seq.layer for seq in corpus}
        layer = layers.pop() if len(layers) == 1 else None
    return AnisotropyReport(
        layer=layer,
        n_pairs=plan.n_pairs,
        expected_cosine=expected,
        one_minus_expected_cosine=1.0 - expected,
        median_cos=float(q50),
        iqr_cos=float(q75 - q25),
        histogram=_histogram(cos, n_bins),
        stratum=plan.stratum,
    )


def similarity_distribution(
    corpus: Sequence[FeatureSequence],
    plan_same: PairSamplingPlan,
    plan_diff: PairSamplingPlan,
    *,
    layer: int | None = None,
    n_bins: int = DEFAULT_N_BINS,
) -> tuple[AnisotropyReport, AnisotropyReport]:
    """Same-recording vs different-recording similarity reports with shared bins."""
    if plan_same.stratum != "same_recording":
        plan_same = PairSamplingPlan(plan_same.n_pairs, "same_recording", plan_same.rng_seed)
    if plan_diff.stratum != "different_recording":
        plan_diff = PairSamplingPlan(plan_diff.n_pairs, "different_recording", plan_diff.rng_seed)
    same = anisotropy(corpus, plan_same, layer=layer, n_bins=n_bins)
    diff = anisotropy(corpus, plan_diff, layer=layer, n_bins=n_bins)
    return same, diff


def rogue_dimensions(
    corpus: Sequence[FeatureSequence], layer: int | None
) -> RogueDimensionReport:
    """Per-dimension mean statistics over all frames at one layer.

    Means and standard deviations accumulate in float64; float32 accumulation
    would lose precision at the magnitudes rogue dimensions reach.
    """
    seqs = [seq for seq in corpus if seq.layer == layer]
    if not seqs:
        raise EmptyCorpusError(f"no sequences at layer {layer!r}")
    dims = {seq.dim for seq in seqs}
    if len(dims) != 1:
        raise ValueError(f"mixed frame dimensions at layer {layer!r}: {sorted(dims)}")
    frames = np.concatenate([seq.frames for seq in seqs]).astype(np.float64)
    means = frames.mean(axis=0)
    argmax = int(np.argmax(means))
    max_mean = float(means[argmax])
    others = np.delete(means, argmax)
    second = float(others.max()) if others.size else max_mean
    return RogueDimensionReport(
        layer=layer,
        max_mean=max_mean,
        argmax_dim=argmax,
        std_of_max_dim=float(frames[:, argmax].std()),
        second_max_mean=second,
        median_of_means=float(np.median(means)),
    )
