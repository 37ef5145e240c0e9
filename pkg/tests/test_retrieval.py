import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unitedqa.records import InputError, Passage
from unitedqa.retrieval import (BM25Retriever, Document, INDEX_MAGIC, bm25_score, build_index, dumps_index,
                                load_corpus, loads_index, retrieve, save_index, load_index, split_passages)
from oracles import bm25_full_scan, rank_full_scan, words_ref

WORDS = "alpha beta gamma delta eps zeta eta theta iota kappa lam mu".split()


def passage(pid, text):
    return Passage(pid, pid.split("-")[0], "", text.split(), text)


def random_corpus(rng, n_passages=12, max_len=15):
    out = []
    for i in range(n_passages):
        n = int(rng.integers(1, max_len))
        out.append(passage(f"p{i:02d}", " ".join(rng.choice(WORDS, size=n))))
    return out


@pytest.mark.parametrize("n, sizes", [(250, [100, 100, 50]), (100, [100]), (0, [])])
def test_split_sizes(n, sizes):
    doc = Document("d", "t", " ".join(f"w{i}" for i in range(n)))
    assert [len(p.tokens) for p in split_passages(doc)] == sizes


def test_split_ids_and_width_check():
    ps = split_passages(Document("doc", "T", "a b c d e"), width=2)
    assert [p.passage_id for p in ps] == ["doc-0", "doc-1", "doc-2"]
    assert all(p.source_doc_id == "doc" and p.title == "T" for p in ps)
    with pytest.raises(ValueError):
        split_passages(Document("d", "", "x"), width=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(WORDS + ["x,", "Y."]), max_size=300), st.integers(1, 120))
def test_split_is_lossless(words, width):
    doc = Document("d", "", " ".join(words))
    ps = split_passages(doc, width)
    assert [t for p in ps for t in p.tokens] == doc.text.split()
    assert all(1 <= len(p.tokens) <= width for p in ps)


def test_df_one_and_length_stats():
    idx = build_index([passage("a", "x y"), passage("b", "y z z"), passage("c", "y")])
    assert idx.df["x"] == 1 and idx.df["y"] == 3 and idx.df["z"] == 1
    assert idx.postings["z"] == [("b", 2)]
    assert idx.avg_length == pytest.approx(2.0)
    assert idx.num_passages == 3


def test_df_matches_naive_scan(rng):
    ps = random_corpus(rng, 20)
    idx = build_index(ps)
    for term in WORDS:
        naive = sum(1 for p in ps if term in words_ref(p.text))
        assert idx.df.get(term, 0) == naive
        assert [pid for pid, _ in idx.postings.get(term, [])] == sorted(pid for pid, _ in idx.postings.get(term, []))


def test_duplicate_passage_id_rejected():
    with pytest.raises(InputError):
        build_index([passage("a", "x"), passage("a", "y")])


def test_idf_values():
    idx = build_index([passage("a", "x y"), passage("b", "y"), passage("c", "y")])
    assert idx.idf("x") == pytest.approx(math.log(1 + 2.5 / 1.5))
    assert idx.idf("x") == pytest.approx(0.98083, abs=1e-5)
    assert idx.idf("y") == pytest.approx(0.13353, abs=1e-5)


def test_bm25_zero_without_overlap_and_unknown_passage():
    idx = build_index([passage("a", "x y"), passage("b", "z")])
    assert bm25_score(idx, ["q"], "a") == 0.0
    with pytest.raises(ValueError):
        bm25_score(idx, ["x"], "nope")


def test_bm25_monotone_in_tf():
    # other statistics (N, df, |p|, avg|p|) held fixed
    idx = build_index([passage("a", "x y"), passage("b", "z")])
    weights = [idx.term_weight(tf, 5) for tf in range(0, 12)]
    assert all(a <= b for a, b in zip(weights, weights[1:]))


def test_retrieve_unique_term_first_and_overflow_k():
    idx = build_index([passage("a", "x y"), passage("b", "y"), passage("c", "q y")])
    res = retrieve(idx, "q", k=10)
    assert res.passage_ids[0] == "c"
    assert len(res.hits) == 3
    scores = [s for _, s in res.hits]
    assert scores == sorted(scores, reverse=True)


def test_retrieve_ties_by_passage_id():
    idx = build_index([passage("b", "x"), passage("a", "x"), passage("c", "y")])
    assert retrieve(idx, "x", 3).passage_ids == ["a", "b", "c"]


def test_retrieve_empty_index_and_bad_k():
    idx = build_index([])
    assert retrieve(idx, "x", 5).hits == []
    with pytest.raises(ValueError):
        retrieve(build_index([passage("a", "x")]), "x", 0)


def test_retrieve_matches_full_scan_on_random_queries():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ps = random_corpus(rng, 15)
        idx = build_index(ps)
        query = " ".join(rng.choice(WORDS + ["unseen"], size=int(rng.integers(1, 5))))
        k = int(rng.integers(1, 16))
        ref = bm25_full_scan({p.passage_id: p.text for p in ps}, query)
        res = retrieve(idx, query, k)
        assert res.passage_ids == rank_full_scan(ref, k)
        for pid, s in res.hits:
            assert s == pytest.approx(ref[pid], rel=1e-12, abs=1e-12)
            assert s == pytest.approx(bm25_score(idx, words_ref(query), pid), rel=1e-12, abs=1e-12)


def test_index_serialization_round_trip(tmp_path, rng):
    ps = random_corpus(rng, 10)
    idx = build_index(ps)
    blob = dumps_index(idx)
    assert blob[:8] == INDEX_MAGIC
    assert dumps_index(loads_index(blob)) == blob
    assert dumps_index(build_index(list(reversed(ps)))) == blob
    save_index(idx, tmp_path / "i.bin")
    back = load_index(tmp_path / "i.bin")
    assert back.df == idx.df and back.lengths == idx.lengths


def test_index_rejects_bad_header(rng):
    blob = dumps_index(build_index(random_corpus(rng, 3)))
    with pytest.raises(InputError):
        loads_index(b"garbage!" + blob[8:])
    with pytest.raises(InputError):
        loads_index(blob[:8] + (99).to_bytes(4, "little") + blob[12:])


def test_concurrent_retrieval_is_consistent(rng):
    idx = build_index(random_corpus(rng, 30))
    retriever = BM25Retriever(idx)
    expected = retriever.retrieve("alpha beta", 5).hits
    results = []
    threads = [threading.Thread(target=lambda: results.append(retriever.retrieve("alpha beta", 5).hits))
               for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == expected for r in results)


def test_load_corpus_reports_line_numbers(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "title": "", "text": "x"}\n{bad json\n')
    with pytest.raises(InputError, match=":2:"):
        load_corpus(path)
    path.write_text('{"id": "a", "text": "x"}\n')
    with pytest.raises(InputError, match="title"):
        load_corpus(path)
