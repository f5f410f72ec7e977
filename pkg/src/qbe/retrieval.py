"""Retrieval evaluation: relevance from transcriptions, Precision@k / Recall@k
/ F1 macro-averaged over queries, per-layer comparison, and the target-word /
distractor selection protocol over a labeled sentence pool.

Relevance is whole-token containment after Unicode case folding: a recording
is relevant to a query when its transcription contains the target word as a
token. Queries whose relevant set is empty are excluded from macro averages
(recall is undefined) and surfaced in diagnostics instead.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dtw import build_corpus_index, load_layer_features, score_corpus
from .errors import EmptyTargetWordError, InsufficientPoolError
from .feature_store import CorpusManifest, QuerySpec, WordSpan

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Case-folded tokens split on whitespace, punctuation and underscores."""
    return _TOKEN_RE.findall(text.casefold())


@dataclass(frozen=True)
class RelevanceJudgments:
    """Per query_id: the set of recording ids whose transcription contains
    the target word as a whole token."""

    relevant: Mapping[str, frozenset[str]]

    def __getitem__(self, query_id: str) -> frozenset[str]:
        return self.relevant[query_id]


def _contains_ngram(tokens: Sequence[str], ngram: Sequence[str]) -> bool:
    n = len(ngram)
    return any(tokens[i : i + n] == list(ngram) for i in range(len(tokens) - n + 1))


def judge(manifest: CorpusManifest, queries: Sequence[QuerySpec]) -> RelevanceJudgments:
    """Build relevance sets from transcriptions.

    Multi-word targets match as a contiguous token sequence.

    Raises:
        EmptyTargetWordError: if a query's word is empty after case folding.
    """
    tokens_by_rec = {
        entry.recording_id: tokenize(entry.transcription) for entry in manifest
    }
    tokenset_by_rec = {rec_id: frozenset(toks) for rec_id, toks in tokens_by_rec.items()}
    relevant: dict[str, frozenset[str]] = {}
    for query in queries:
        target = tokenize(query.target_word)
        if not target:
            raise EmptyTargetWordError(
                f"query {query.query_id!r}: target word empty after folding"
            )
        if len(target) == 1:
            token = target[0]
            hits = frozenset(
                rec_id for rec_id, toks in tokenset_by_rec.items() if token in toks
            )
        else:
            hits = frozenset(
                rec_id
                for rec_id, toks in tokens_by_rec.items()
                if _contains_ngram(toks, target)
            )
        relevant[query.query_id] = hits
    return RelevanceJudgments(relevant)


def precision_recall_at_k(
    ranking: Sequence[str], relevant: frozenset[str] | set[str], k: int
) -> tuple[float, float]:
    """P@k and R@k for one ranked list.

    If the ranking is shorter than k its full length is used; callers track
    the truncation. With an empty relevant set both values are 0.0 (such
    queries are excluded from macro averages upstream).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    effective_k = min(k, len(ranking))
    if effective_k == 0:
        return 0.0, 0.0
    hits = sum(1 for rec_id in ranking[:effective_k] if rec_id in relevant)
    precision = hits / effective_k
    recall = hits / len(relevant) if relevant else 0.0
    return precision, recall


@dataclass(frozen=True)
class RetrievalMetrics:
    """Macro-averaged metrics for one (layer, k) cell."""

    layer: int | None
    k: int
    precision_at_k: float
    recall_at_k: float
    f1_at_k: float
    n_queries: int


@dataclass
class EvaluationResult:
    metrics: list[RetrievalMetrics]
    best_layer_per_k: dict[int, int | None]
    skipped_query_ids: tuple[str, ...] = ()
    truncated_pairs: tuple[tuple[str, int], ...] = ()  # (query_id, k) using full length

    def metric(self, layer: int | None, k: int) -> RetrievalMetrics:
        for m in self.metrics:
            if m.layer == layer and m.k == k:
                return m
        raise KeyError((layer, k))

    def average_over_layers(self, k: int) -> tuple[float, float, float]:
        """(P, R, F1) averaged across all evaluated layers at one k.

        Optional alternative to best-layer selection; not used for ranking
        layers.
        """
        cells = [m for m in self.metrics if m.k == k]
        if not cells:
            raise KeyError(k)
        p = float(np.mean([m.precision_at_k for m in cells]))
        r = float(np.mean([m.recall_at_k for m in cells]))
        return p, r, _f1(p, r)


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def rank_all_queries(
    manifest: CorpusManifest,
    queries: Sequence[QuerySpec],
    layer: int | None,
    *,
    workers: int | None = None,
) -> dict[str, list[str]]:
    """Ranked recording ids per query at one layer (features loaded once)."""
    features = load_layer_features(manifest, layer)
    index = build_corpus_index(manifest, layer, features)

    def run(query: QuerySpec) -> tuple[str, list[str]]:
        scored = score_corpus(manifest, query, layer, index=index, features=features)
        return query.query_id, [rec_id for rec_id, _ in scored]

    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(run, queries))
    else:
        pairs = [run(q) for q in queries]
    return dict(pairs)


def evaluate(
    manifest: CorpusManifest,
    queries: Sequence[QuerySpec],
    layers: Sequence[int | None],
    ks: Sequence[int],
    *,
    workers: int | None = None,
) -> EvaluationResult:
    """Macro P/R/F1 per (layer, k) plus the best-F1 layer per k.

    Deterministic for fixed inputs; aggregation order is independent of the
    worker pool. Best-layer ties break toward the lower layer index.
    """
    judgments = judge(manifest, queries)
    scored_queries = [q for q in queries if judgments[q.query_id]]
    skipped = tuple(q.query_id for q in queries if not judgments[q.query_id])
    metrics: list[RetrievalMetrics] = []
    truncated: list[tuple[str, int]] = []
    for layer in layers:
        rankings = rank_all_queries(manifest, scored_queries, layer, workers=workers)
        for k in ks:
            precisions = []
            recalls = []
            for q in scored_queries:
                ranking = rankings[q.query_id]
                if len(ranking) < k:
                    truncated.append((q.query_id, k))
                p, r = precision_recall_at_k(ranking, judgments[q.query_id], k)
                precisions.append(p)
                recalls.append(r)
            macro_p = float(np.mean(precisions)) if precisions else 0.0
            macro_r = float(np.mean(recalls)) if recalls else 0.0
            metrics.append(
                RetrievalMetrics(
                    layer=layer,
                    k=k,
                    precision_at_k=macro_p,
                    recall_at_k=macro_r,
                    f1_at_k=_f1(macro_p, macro_r),
                    n_queries=len(scored_queries),
                )
            )
    best: dict[int, int | None] = {}
    for k in ks:
        cells = [m for m in metrics if m.k == k]
        # ties toward the lower layer index; layerless (MFCC) sorts as -1
        cells.sort(key=lambda m: (-m.f1_at_k, -1 if m.layer is None else m.layer))
        best[k] = cells[0].layer if cells else None
    return EvaluationResult(
        metrics=metrics,
        best_layer_per_k=best,
        skipped_query_ids=skipped,
        truncated_pairs=tuple(truncated),
    )


# --- protocol corpus selection ---------------------------------------------------


def build_protocol_corpus(
    pool: CorpusManifest,
    n_words: int,
    queries_per_word: int,
    n_distractors: int,
    rng_seed: int,
) -> tuple[CorpusManifest, list[QuerySpec]]:
    """Select target words, query sentences, and distractors from a labeled pool.

    Picks n_words words each appearing (with an alignment span) in at least
    queries_per_word distinct sentences, assigns queries_per_word sentences
    per word (each doubling as a query source), and n_distractors sentences
    containing none of the selected words. Deterministic for a given seed.

    Raises:
        InsufficientPoolError: if the pool cannot satisfy the counts.
    """
    rng = np.random.default_rng(rng_seed)
    tokens_by_rec: dict[str, frozenset[str]] = {}
    span_by_rec_word: dict[tuple[str, str], WordSpan] = {}
    word_to_recs: dict[str, set[str]] = {}
    for entry in pool:
        toks = frozenset(tokenize(entry.transcription))
        tokens_by_rec[entry.recording_id] = toks
        if entry.alignments:
            for span in entry.alignments:
                word = span.word.casefold()
                if word in toks and (entry.recording_id, word) not in span_by_rec_word:
                    span_by_rec_word[(entry.recording_id, word)] = span
                    word_to_recs.setdefault(word, set()).add(entry.recording_id)
    candidates = sorted(w for w, recs in word_to_recs.items() if len(recs) >= queries_per_word)
    if len(candidates) < n_words:
        raise InsufficientPoolError(
            f"only {len(candidates)} words have >= {queries_per_word} aligned "
            f"sentences; {n_words} requested"
        )
    words = [candidates[i] for i in rng.choice(len(candidates), size=n_words, replace=False)]
    used: set[str] = set()
    queries: list[QuerySpec] = []
    selected_ids: list[str] = []
    for word in words:
        eligible = sorted(word_to_recs[word] - used)
        if len(eligible) < queries_per_word:
            raise InsufficientPoolError(
                f"word {word!r}: only {len(eligible)} unused sentences available, "
                f"{queries_per_word} needed"
            )
        picked = [eligible[i] for i in rng.choice(len(eligible), size=queries_per_word, replace=False)]
        for idx, rec_id in enumerate(picked):
            queries.append(
                QuerySpec(
                    query_id=f"{word}_{idx:02d}",
                    target_word=word,
                    mode="contextual_slice",
                    recording_id=rec_id,
                    span=span_by_rec_word[(rec_id, word)],
                )
            )
        used.update(picked)
        selected_ids.extend(picked)
    word_set = set(words)
    distractor_pool = sorted(
        rec_id
        for rec_id, toks in tokens_by_rec.items()
        if rec_id not in used and not (toks & word_set)
    )
    if len(distractor_pool) < n_distractors:
        raise InsufficientPoolError(
            f"only {len(distractor_pool)} distractor sentences available, "
            f"{n_distractors} requested"
        )
    distractors = [
        distractor_pool[i]
        for i in rng.choice(len(distractor_pool), size=n_distractors, replace=False)
    ]
    keep = set(selected_ids) | set(distractors)
    entries = [entry for entry in pool if entry.recording_id in keep]
    return CorpusManifest(entries, base_dir=pool.base_dir), queries
