import json

import numpy as np
import pytest

from qbe.errors import EmptyTargetWordError, InsufficientPoolError
from qbe.feature_store import (
    CorpusManifest,
    FeatureSequence,
    ManifestEntry,
    QuerySpec,
    WordSpan,
    load_manifest,
    write_feature_file,
)
from qbe.retrieval import (
    build_protocol_corpus,
    evaluate,
    judge,
    precision_recall_at_k,
    tokenize,
)


def entry(rec_id, transcription, spans=None):
    return ManifestEntry(rec_id, transcription, {}, spans)


def manifest_of(*entries):
    return CorpusManifest(list(entries))


def query_for(word, qid=None):
    return QuerySpec(qid or f"q_{word}", word, "contextual_slice",
                     recording_id="r0", span=WordSpan(word, 0.0, 0.2))


# --- judging -----------------------------------------------------------------


def test_whole_token_containment():
    m = manifest_of(entry("r0", "La casa roja."), entry("r1", "Las casas rojas."))
    j = judge(m, [query_for("casa")])
    assert j["q_casa"] == frozenset({"r0"})


def test_case_folding_with_non_ascii():
    m = manifest_of(entry("r0", "AÑOS después"), entry("r1", "mes antes"))
    j = judge(m, [query_for("años")])
    assert j["q_años"] == frozenset({"r0"})


def test_punctuation_is_a_token_boundary():
    m = manifest_of(entry("r0", "casa, roja"), entry("r1", "vino-casa"))
    j = judge(m, [query_for("casa")])
    assert j["q_casa"] == frozenset({"r0", "r1"})


def test_empty_word_after_folding_errors():
    m = manifest_of(entry("r0", "hola"))
    with pytest.raises(EmptyTargetWordError):
        judge(m, [query_for("...")])


def test_multi_word_target_matches_contiguous_sequence():
    m = manifest_of(
        entry("r0", "buenos días señor"),
        entry("r1", "días buenos"),
        entry("r2", "buenos y días"),
    )
    j = judge(m, [query_for("buenos días", qid="q")])
    assert j["q"] == frozenset({"r0"})


def test_tokenize_handles_unicode_words():
    assert tokenize("El Niño, AÑOS _x_ 42.") == ["el", "niño", "años", "x", "42"]


# --- precision / recall -----------------------------------------------------------


def test_top1_relevant_out_of_ten():
    ranking = ["a"] + [f"x{i}" for i in range(20)]
    relevant = frozenset({"a"} | {f"rel{i}" for i in range(9)})
    p, r = precision_recall_at_k(ranking, relevant, 1)
    assert p == 1.0
    assert r == pytest.approx(0.1)


def test_perfect_prefix_in_large_pool():
    relevant = frozenset(f"rel{i}" for i in range(10))
    ranking = sorted(relevant) + [f"x{i}" for i in range(990)]
    p, r = precision_recall_at_k(ranking, relevant, 5)
    assert p == 1.0
    assert r == 0.5


def test_short_ranking_uses_full_length():
    p, r = precision_recall_at_k(["a", "b"], frozenset({"a", "b"}), 10)
    assert p == 1.0
    assert r == 1.0


def test_recall_non_decreasing_and_pk_times_k_integer():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(1, 40))
        ranking = [f"d{i}" for i in range(n)]
        relevant = frozenset(
            f"d{i}" for i in np.flatnonzero(rng.random(n) < rng.uniform(0.1, 0.9))
        )
        if not relevant:
            continue
        last_r = 0.0
        last_hits = 0
        for k in range(1, n + 1):
            p, r = precision_recall_at_k(ranking, relevant, k)
            hits = p * k
            assert hits == pytest.approx(round(hits), abs=1e-9)
            assert round(hits) >= last_hits
            assert r >= last_r - 1e-12
            last_r = r
            last_hits = round(hits)


def test_perfect_ranking_closed_forms():
    rng = np.random.default_rng(1)
    for trial in range(20):
        n_rel = int(rng.integers(1, 15))
        n_irr = int(rng.integers(0, 30))
        relevant = frozenset(f"r{i}" for i in range(n_rel))
        ranking = [f"r{i}" for i in range(n_rel)] + [f"x{i}" for i in range(n_irr)]
        for k in range(1, n_rel + n_irr + 1):
            p, r = precision_recall_at_k(ranking, relevant, k)
            assert p == pytest.approx(min(1.0, n_rel / k), abs=1e-12)
            assert r == pytest.approx(min(1.0, k / n_rel), abs=1e-12)


# --- evaluate over a real corpus ----------------------------------------------------


@pytest.fixture()
def planted_two_layer_corpus(tmp_path):
    """4 recordings x 2 layers; layer 0 plants query blocks, layer 1 is noise."""
    rng = np.random.default_rng(2)
    dim = 5
    block = {}
    for word in ("uno", "dos"):
        t = rng.standard_normal((3, dim))
        block[word] = (t / np.linalg.norm(t, axis=1, keepdims=True)).astype(np.float32)
    entries = []
    contents = {
        "r0": "el uno grande",
        "r1": "otro uno aqui",
        "r2": "el dos grande",
        "r3": "nada que ver",
    }
    for rec_id, text in contents.items():
        spans = []
        frames0 = rng.standard_normal((30, dim)).astype(np.float32)
        for word in ("uno", "dos"):
            if word in text.split():
                frames0[5:8] = block[word]
                spans.append({"word": word, "start_s": 5 / 49.0, "end_s": 8 / 49.0})
        frames1 = rng.standard_normal((30, dim)).astype(np.float32)
        for layer, frames in ((0, frames0), (1, frames1)):
            write_feature_file(
                FeatureSequence(frames, 49.0, rec_id, layer),
                tmp_path / f"{rec_id}_l{layer}.qbef",
            )
        entries.append(
            {
                "id": rec_id,
                "transcription": text,
                "features": {"0": f"{rec_id}_l0.qbef", "1": f"{rec_id}_l1.qbef"},
                "alignments": spans,
            }
        )
    (tmp_path / "manifest.json").write_text(json.dumps({"recordings": entries}))
    manifest = load_manifest(tmp_path / "manifest.json")
    queries = [
        QuerySpec("q_uno", "uno", "contextual_slice", recording_id="r0",
                  span=WordSpan("uno", 5 / 49.0, 8 / 49.0)),
        QuerySpec("q_dos", "dos", "contextual_slice", recording_id="r2",
                  span=WordSpan("dos", 5 / 49.0, 8 / 49.0)),
    ]
    return manifest, queries


def test_evaluate_planted_layer_dominates(planted_two_layer_corpus):
    manifest, queries = planted_two_layer_corpus
    result = evaluate(manifest, queries, layers=[0, 1], ks=[1, 2])
    assert result.metric(0, 1).precision_at_k == 1.0
    # layer 0 strictly dominates, so it is best at every k
    for k in (1, 2):
        m0, m1 = result.metric(0, k), result.metric(1, k)
        if m0.f1_at_k > m1.f1_at_k:
            assert result.best_layer_per_k[k] == 0
    assert result.metric(0, 1).n_queries == 2


def test_evaluate_macro_is_mean_over_queries():
    # three rankings with P@2 of 1.0, 0.5, 0.0
    judgments = {
        "q0": frozenset({"a", "b"}),
        "q1": frozenset({"a"}),
        "q2": frozenset({"z"}),
    }
    rankings = {
        "q0": ["a", "b", "c", "z"],
        "q1": ["a", "b", "c", "z"],
        "q2": ["a", "b", "c", "z"],
    }
    ps = [precision_recall_at_k(rankings[q], judgments[q], 2)[0] for q in ("q0", "q1", "q2")]
    assert ps == [1.0, 0.5, 0.0]
    assert float(np.mean(ps)) == 0.5


def test_evaluate_is_invariant_under_query_reordering(planted_two_layer_corpus):
    manifest, queries = planted_two_layer_corpus
    a = evaluate(manifest, queries, layers=[0], ks=[1, 2])
    b = evaluate(manifest, list(reversed(queries)), layers=[0], ks=[1, 2])
    assert a.metrics == b.metrics


def test_evaluate_skips_queries_with_empty_relevant_set(planted_two_layer_corpus):
    manifest, queries = planted_two_layer_corpus
    ghost = QuerySpec("q_ghost", "fantasma", "contextual_slice", recording_id="r0",
                      span=WordSpan("fantasma", 0.0, 0.1))
    result = evaluate(manifest, queries + [ghost], layers=[0], ks=[1])
    assert result.skipped_query_ids == ("q_ghost",)
    assert result.metric(0, 1).n_queries == 2


def test_evaluate_worker_count_does_not_change_results(planted_two_layer_corpus):
    manifest, queries = planted_two_layer_corpus
    a = evaluate(manifest, queries, layers=[0, 1], ks=[1, 2], workers=1)
    b = evaluate(manifest, queries, layers=[0, 1], ks=[1, 2], workers=4)
    assert a.metrics == b.metrics
    assert a.best_layer_per_k == b.best_layer_per_k


# --- protocol selection ----------------------------------------------------------


def pool_manifest(n_words=4, per_word=3, n_fillers=10, seed=0):
    rng = np.random.default_rng(seed)
    entries = []
    idx = 0
    words = [f"word{i}" for i in range(n_words)]
    for w, word in enumerate(words):
        for i in range(per_word + 1):  # one extra eligible sentence per word
            spans = (WordSpan(word, 0.1, 0.3),)
            entries.append(entry(f"rec{idx:03d}", f"la {word} grande", spans))
            idx += 1
    for i in range(n_fillers):
        entries.append(entry(f"rec{idx:03d}", f"relleno numero {i}", ()))
        idx += 1
    return manifest_of(*entries)


def test_protocol_counts_small():
    pool = pool_manifest(n_words=3, per_word=2, n_fillers=8)
    corpus, queries = build_protocol_corpus(pool, 2, 2, 6, rng_seed=1)
    assert len(corpus) == 2 * 2 + 6
    assert len(queries) == 4
    for q in queries:
        assert q.mode == "contextual_slice"
        assert q.recording_id in corpus
        assert corpus[q.recording_id].transcription.find(q.target_word) >= 0


def test_protocol_distractors_contain_no_target_words():
    pool = pool_manifest(n_words=4, per_word=3, n_fillers=12)
    corpus, queries = build_protocol_corpus(pool, 2, 3, 8, rng_seed=3)
    words = {q.target_word for q in queries}
    sources = {q.recording_id for q in queries}
    for entry_ in corpus:
        if entry_.recording_id in sources:
            continue
        toks = set(entry_.transcription.split())
        assert not (toks & words)


def test_protocol_deterministic_for_seed():
    pool = pool_manifest()
    a = build_protocol_corpus(pool, 2, 2, 5, rng_seed=42)
    b = build_protocol_corpus(pool, 2, 2, 5, rng_seed=42)
    assert a[0].recording_ids() == b[0].recording_ids()
    assert [q.query_id for q in a[1]] == [q.query_id for q in b[1]]
    c = build_protocol_corpus(pool, 2, 2, 5, rng_seed=43)
    assert (
        a[0].recording_ids() != c[0].recording_ids()
        or [q.recording_id for q in a[1]] != [q.recording_id for q in c[1]]
    )


def test_protocol_insufficient_pool_errors():
    pool = pool_manifest(n_words=2, per_word=2, n_fillers=2)
    with pytest.raises(InsufficientPoolError):
        build_protocol_corpus(pool, 3, 2, 2, rng_seed=0)
    with pytest.raises(InsufficientPoolError):
        build_protocol_corpus(pool, 2, 2, 50, rng_seed=0)


def test_protocol_full_scale_counts():
    # 30 words x 10 sentences + 700 distractors = 1,000-sentence corpus, 300 queries
    entries = []
    idx = 0
    for w in range(40):
        word = f"palabra{w:02d}"
        for i in range(12):
            entries.append(
                entry(f"rec{idx:05d}", f"frase con {word} dentro", (WordSpan(word, 0.2, 0.5),))
            )
            idx += 1
    for i in range(800):
        entries.append(entry(f"rec{idx:05d}", f"relleno {i} sin objetivo", ()))
        idx += 1
    pool = manifest_of(*entries)
    corpus, queries = build_protocol_corpus(pool, 30, 10, 700, rng_seed=7)
    assert len(corpus) == 1000
    assert len(queries) == 300
