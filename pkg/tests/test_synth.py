import numpy as np
import pytest

from qbe.feature_store import load_manifest, load_query_set, resolve_query
from qbe.synth import make_planted_corpus


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    manifest_path, queries_path = make_planted_corpus(
        out,
        n_words=3,
        queries_per_word=2,
        n_distractors=5,
        dim=8,
        length_range=(20, 40),
        template_len=4,
        noise_sigmas={0: 0.01, 1: 0.5},
        rng_seed=5,
    )
    return manifest_path, queries_path


def test_corpus_shape_and_validity(tiny_corpus):
    manifest_path, queries_path = tiny_corpus
    manifest = load_manifest(manifest_path, strict=True)
    queries = load_query_set(queries_path)
    assert len(manifest) == 3 * 2 + 5
    assert len(queries) == 6
    for entry in manifest:
        assert set(entry.feature_paths) == {0, 1}


def test_query_slice_matches_planted_span(tiny_corpus):
    manifest_path, queries_path = tiny_corpus
    manifest = load_manifest(manifest_path)
    queries = load_query_set(queries_path)
    for q in queries:
        seq = resolve_query(manifest, q, 0)
        assert seq.n_frames == 4
        # the query word appears as a token in the source transcription
        assert q.target_word in manifest[q.recording_id].transcription.split()


def test_distractor_transcriptions_contain_no_word_tokens(tiny_corpus):
    manifest_path, queries_path = tiny_corpus
    manifest = load_manifest(manifest_path)
    queries = load_query_set(queries_path)
    words = {q.target_word for q in queries}
    sources = {q.recording_id for q in queries}
    for entry in manifest:
        if entry.recording_id not in sources:
            assert not (set(entry.transcription.split()) & words)


def test_layers_share_background_but_differ_in_noise(tiny_corpus):
    manifest_path, queries_path = tiny_corpus
    manifest = load_manifest(manifest_path)
    queries = load_query_set(queries_path)
    q = queries[0]
    entry = manifest[q.recording_id]
    clean = manifest.features(q.recording_id, 0).frames
    noisy = manifest.features(q.recording_id, 1).frames
    span = entry.alignments[0]
    lo = round(span.start_s * 49.0)
    hi = round(span.end_s * 49.0)
    outside = np.ones(len(clean), dtype=bool)
    outside[lo:hi] = False
    np.testing.assert_array_equal(clean[outside], noisy[outside])
    assert not np.array_equal(clean[lo:hi], noisy[lo:hi])


def test_generator_is_deterministic(tmp_path):
    kwargs = dict(
        n_words=2, queries_per_word=2, n_distractors=3, dim=6,
        length_range=(15, 25), template_len=3, rng_seed=11,
    )
    m1, q1 = make_planted_corpus(tmp_path / "a", **kwargs)
    m2, q2 = make_planted_corpus(tmp_path / "b", **kwargs)
    man1, man2 = load_manifest(m1), load_manifest(m2)
    assert man1.recording_ids() == man2.recording_ids()
    for rec_id in man1.recording_ids():
        f1 = man1.features(rec_id, 0).frames
        f2 = man2.features(rec_id, 0).frames
        np.testing.assert_array_equal(f1, f2)
