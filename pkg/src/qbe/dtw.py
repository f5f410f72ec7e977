"""Subsequence-DTW retrieval kernel.

Scores a query (m frames) against each recording (n frames) on a cosine cost
matrix, with free start and end on the recording axis. The accumulated-cost
recurrence is

    D(i, 0) = c(i, 0)
    D(0, j) = D(0, j-1) + c(0, j)
    D(i, j) = c(i, j) + min(D(i-1, j-1), D(i-1, j), D(i, j-1))

and raw_cost = min_i D(i, m-1). Columns are computed with a closed-form
min-plus scan (cumulative sums + running minima), so the whole corpus can be
scored as a handful of vectorized array operations; batch scoring over padded
per-recording rows replaces a per-recording worker fan-out while keeping
results independent of any pool size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, MissingLayerError, ZeroNormError
from .feature_store import CorpusManifest, FeatureSequence, QuerySpec, resolve_query

_PAD = 1e30  # cost for padded cells; large enough to never win a minimum


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise cosine costs, shape (n_target_frames, m_query_frames)."""

    costs: np.ndarray
    derived_from: tuple[str, str] = ("", "")  # (recording_id, query_id)

    def __post_init__(self) -> None:
        costs = np.ascontiguousarray(self.costs, dtype=np.float64)
        if costs.ndim != 2 or costs.shape[0] < 1 or costs.shape[1] < 1:
            raise ValueError(f"costs must be a non-empty 2-D matrix, got {costs.shape}")
        if costs.min() < 0.0 or costs.max() > 2.0:
            raise ValueError("cost entries must lie in [0, 2]")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)

    @property
    def n(self) -> int:
        return self.costs.shape[0]

    @property
    def m(self) -> int:
        return self.costs.shape[1]


@dataclass(frozen=True)
class MatchResult:
    """Best subsequence match of one query inside one recording."""

    recording_id: str
    query_id: str
    raw_cost: float
    normalized_cost: float
    match_span: tuple[int, int]  # target frames, end exclusive
    path: tuple[tuple[int, int], ...]


def unit_normalize(seq: FeatureSequence, role: str = "sequence") -> np.ndarray:
    """Rows of ``seq`` scaled to unit norm (float64).

    Raises:
        ZeroNormError: naming the offending frame index.
    """
    frames = seq.frames.astype(np.float64)
    norms = np.linalg.norm(frames, axis=1)
    if (norms == 0.0).any():
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise ZeroNormError(f"zero-norm frame {idx} in {role} {seq.source_id!r}")
    return frames / norms[:, None]


def cost_matrix(target: FeatureSequence, query: FeatureSequence) -> CostMatrix:
    """Dense cosine cost matrix: costs[i, j] = 1 - cos(target_i, query_j).

    Frames are unit-normalized once per sequence so the matrix is a single
    dense product.
    """
    if target.dim != query.dim:
        raise DimensionMismatchError(
            f"target {target.source_id!r} dim {target.dim} != "
            f"query {query.source_id!r} dim {query.dim}"
        )
    t = unit_normalize(target, "target")
    q = unit_normalize(query, "query")
    costs = 1.0 - t @ q.T
    np.clip(costs, 0.0, 2.0, out=costs)
    return CostMatrix(costs, (target.source_id, query.source_id))


# --- DP kernel ---------------------------------------------------------------


def _next_column(prev: np.ndarray, col: np.ndarray) -> np.ndarray:
    """One DP column via the min-plus scan; works on (..., n) stacks.

    With b(i) = min(D(i-1, j-1), D(i, j-1)) the recurrence
    D(i, j) = c(i) + min(b(i), D(i-1, j)) unrolls to
    D(i, j) = P(i) + min_{s<=i} (b(s) - P(s-1)) where P is the cumulative
    sum of c, which vectorizes with a running minimum.
    """
    b = np.empty_like(prev)
    b[..., 0] = prev[..., 0]
    np.minimum(prev[..., :-1], prev[..., 1:], out=b[..., 1:])
    p = np.cumsum(col, axis=-1)
    return p + np.minimum.accumulate(b - (p - col), axis=-1)


def _dp_matrix(costs: np.ndarray) -> np.ndarray:
    """Full accumulated-cost matrix (n, m) in float64."""
    costs = np.asarray(costs, dtype=np.float64)
    n, m = costs.shape
    acc = np.empty((n, m))
    acc[:, 0] = costs[:, 0]
    for j in range(1, m):
        acc[:, j] = _next_column(acc[:, j - 1], costs[:, j])
    return acc


def subsequence_dtw_cost(costs: np.ndarray) -> float:
    """raw_cost only, keeping a single rolling column in memory."""
    costs = np.asarray(costs, dtype=np.float64)
    col = costs[:, 0].copy()
    for j in range(1, costs.shape[1]):
        col = _next_column(col, costs[:, j])
    return float(col.min())


def subsequence_dtw(costs: CostMatrix) -> MatchResult:
    """Optimal free-start/free-end alignment with the full path materialized.

    Backtracking tie-breaks prefer diagonal, then vertical (target advance),
    then horizontal; the end frame is the lowest-index minimum of the last
    column.
    """
    acc = _dp_matrix(costs.costs)
    m = costs.m
    end = int(np.argmin(acc[:, m - 1]))
    raw = float(acc[end, m - 1])
    i, j = end, m - 1
    path = [(i, j)]
    while j > 0:
        if i == 0:
            i, j = 0, j - 1
        else:
            # order encodes the tie preference: diagonal, vertical, horizontal
            candidates = (
                (acc[i - 1, j - 1], 0, i - 1, j - 1),
                (acc[i - 1, j], 1, i - 1, j),
                (acc[i, j - 1], 2, i, j - 1),
            )
            _, _, i, j = min(candidates)
        path.append((i, j))
    path.reverse()
    return MatchResult(
        recording_id=costs.derived_from[0],
        query_id=costs.derived_from[1],
        raw_cost=raw,
        normalized_cost=raw / m,
        match_span=(path[0][0], end + 1),
        path=tuple(path),
    )


def brute_force_min_cost(costs: np.ndarray) -> float:
    """Exhaustive minimum over all monotone free-start/free-end paths.

    Exponential-time oracle for cross-checking the DP; keep n and m small.
    """
    costs = np.asarray(costs, dtype=np.float64)
    n, m = costs.shape
    rows = costs.tolist()
    best = np.inf
    # iterative DFS; stack holds (i, j, accumulated cost up to and incl. (i,j))
    for start in range(n):
        stack = [(start, 0, rows[start][0])]
        while stack:
            i, j, acc = stack.pop()
            if j == m - 1:
                if acc < best:
                    best = acc
                if i + 1 < n:
                    stack.append((i + 1, j, acc + rows[i + 1][j]))
                continue
            if i + 1 < n:
                stack.append((i + 1, j + 1, acc + rows[i + 1][j + 1]))
                stack.append((i + 1, j, acc + rows[i + 1][j]))
            stack.append((i, j + 1, acc + rows[i][j + 1]))
    return float(best)


# --- corpus-level scoring -------------------------------------------------------


class CorpusIndex:
    """Unit-normalized corpus frames for one layer, laid out for batch scoring."""

    def __init__(self, ids: Sequence[str], frame_blocks: Sequence[np.ndarray]):
        if len(ids) != len(frame_blocks):
            raise ValueError("ids and frame_blocks must align")
        self.ids = tuple(ids)
        lengths = np.array([b.shape[0] for b in frame_blocks], dtype=np.int64)
        self.lengths = lengths
        self.n_max = int(lengths.max())
        self.frames = np.concatenate(frame_blocks)
        # flat positions of each real frame inside the (R, n_max) padded layout
        starts = np.repeat(np.arange(len(ids)) * self.n_max, lengths)
        within = np.concatenate([np.arange(l) for l in lengths])
        self._scatter = starts + within

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def scores(self, query_unit: np.ndarray) -> np.ndarray:
        """Normalized subsequence-DTW cost of the query against every recording."""
        m = query_unit.shape[0]
        flat = 1.0 - self.frames @ query_unit.T
        np.clip(flat, 0.0, 2.0, out=flat)
        padded = np.full((len(self.ids) * self.n_max, m), _PAD)
        padded[self._scatter] = flat
        padded = padded.reshape(len(self.ids), self.n_max, m)
        col = padded[:, :, 0].copy()
        for j in range(1, m):
            col = _next_column(col, padded[:, :, j])
        col[np.arange(self.n_max)[None, :] >= self.lengths[:, None]] = _PAD
        return col.min(axis=1) / m


def build_corpus_index(
    manifest: CorpusManifest,
    layer: int | None,
    features: Mapping[str, FeatureSequence] | None = None,
) -> CorpusIndex:
    """Load (or reuse) all recordings' features at ``layer`` and normalize once.

    Raises:
        MissingLayerError: listing every recording without that layer.
    """
    missing = [
        e.recording_id for e in manifest if layer not in e.feature_paths
    ]
    if missing:
        raise MissingLayerError(layer, missing)
    ids = manifest.recording_ids()
    blocks = []
    for rec_id in ids:
        seq = features[rec_id] if features is not None else manifest.features(rec_id, layer)
        blocks.append(unit_normalize(seq, "recording"))
    return CorpusIndex(ids, blocks)


def load_layer_features(
    manifest: CorpusManifest, layer: int | None
) -> dict[str, FeatureSequence]:
    """Read every recording's features at one layer (for reuse across queries)."""
    missing = [e.recording_id for e in manifest if layer not in e.feature_paths]
    if missing:
        raise MissingLayerError(layer, missing)
    return {e.recording_id: manifest.features(e.recording_id, layer) for e in manifest}


def score_corpus(
    manifest: CorpusManifest,
    query: QuerySpec,
    layer: int | None,
    *,
    index: CorpusIndex | None = None,
    features: Mapping[str, FeatureSequence] | None = None,
) -> list[tuple[str, float]]:
    """Rank all recordings by normalized match cost, cheapest first.

    Ties break by recording_id so the order is total and deterministic.
    """
    query_seq = resolve_query(manifest, query, layer)
    if index is None:
        index = build_corpus_index(manifest, layer, features)
    if index.dim != query_seq.dim:
        raise DimensionMismatchError(
            f"corpus dim {index.dim} != query {query.query_id!r} dim {query_seq.dim}"
        )
    q = unit_normalize(query_seq, "query")
    costs = index.scores(q)
    order = sorted(range(len(index.ids)), key=lambda r: (costs[r], index.ids[r]))
    return [(index.ids[r], float(costs[r])) for r in order]


def search(
    manifest: CorpusManifest,
    query: QuerySpec,
    layer: int | None,
    *,
    top_k: int | None = None,
    index: CorpusIndex | None = None,
    features: Mapping[str, FeatureSequence] | None = None,
) -> list[MatchResult]:
    """Ranked matches of ``query`` against every recording in the corpus.

    A cost-only pass ranks all recordings; full alignments (span + path) are
    then recovered for the returned results. ``top_k=None`` returns one
    MatchResult per recording.
    """
    query_seq = resolve_query(manifest, query, layer)
    if features is None and index is None:
        features = load_layer_features(manifest, layer)
    if index is None:
        index = build_corpus_index(manifest, layer, features)
    ranking = score_corpus(manifest, query, layer, index=index)
    if top_k is not None:
        ranking = ranking[: max(top_k, 0)]
    results = []
    for rec_id, _cost in ranking:
        target = features[rec_id] if features is not None else manifest.features(rec_id, layer)
        matrix = CostMatrix(
            cost_matrix(target, query_seq).costs, (rec_id, query.query_id)
        )
        results.append(subsequence_dtw(matrix))
    return results
