import numpy as np
import pytest

from elq.catalog import load_catalog
from elq.data import QuestionRecord, read_predictions, read_questions, to_examples, write_questions
from elq.encoder import read_precomputed
from elq.errors import DataError, FormatError
from elq.synthetic import WorkloadSpec, generate, write_workload


def test_question_roundtrip(tmp_path):
    recs = [QuestionRecord("a", "Who is Shaq?", ((2, 2, "E1"),)), QuestionRecord("b", "nothing here")]
    write_questions(tmp_path / "q.jsonl", recs)
    assert read_questions(tmp_path / "q.jsonl") == recs


def test_question_errors(tmp_path):
    p = tmp_path / "q.jsonl"
    p.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n')
    with pytest.raises(FormatError, match=":2"):
        read_questions(p)
    p.write_text('{"text": "x"}\n')
    with pytest.raises(FormatError, match=":1"):
        read_questions(p)
    p.write_text('{"id": "a", "predictions": [{"entity_id": "E"}]}\n')
    with pytest.raises(FormatError):
        read_predictions(p)


SMALL = WorkloadSpec(n_entities=30, dim=16, n_train=20, n_dev=5, n_test=10)


def test_generation_is_deterministic(tmp_path):
    a = write_workload(generate(SMALL), tmp_path / "a")
    b = write_workload(generate(SMALL), tmp_path / "b")
    for key in a:
        with open(a[key], "rb") as fa, open(b[key], "rb") as fb:
            assert fa.read() == fb.read(), key


def test_generated_questions_are_consistent(tmp_path):
    paths = write_workload(generate(SMALL), tmp_path)
    cat = load_catalog(paths["entities"], paths["embeddings"])
    recs = read_questions(paths["train"])
    feats = read_precomputed(paths["train_features"])
    examples = to_examples(recs, cat, feats)
    for rec, ex in zip(recs, examples):
        toks = rec.tokenized().tokens
        assert SMALL.min_tokens <= len(toks) <= SMALL.max_tokens
        assert SMALL.min_mentions <= len(ex.mentions) <= SMALL.max_mentions
        for s, e, eid in rec.mentions:
            title = cat.records[cat.index_of(eid)].title.lower().split()
            assert list(toks[s : e + 1]) == title
    assert np.allclose(np.linalg.norm(cat.embeddings, axis=1), 1.0, atol=1e-6)


def test_noise_free_rep_prefers_its_entity():
    wl = generate(WorkloadSpec(n_entities=50, dim=32, n_train=30, n_dev=0, n_test=0, noise=0.0))
    E = wl.embeddings.astype(np.float64)
    ids = [r.id for r in wl.records]
    for rec in wl.splits["train"]:
        feats = wl.features["train"][rec.id].astype(np.float64)
        for s, e, eid in rec.mentions:
            y = feats[s : e + 1].mean(axis=0) @ wl.encoder.fixed_map()
            assert int(np.argmax(E @ y)) == ids.index(eid)


def test_empty_splits(tmp_path):
    paths = write_workload(generate(WorkloadSpec(n_entities=5, dim=8, n_train=0, n_dev=0, n_test=0)), tmp_path)
    assert read_questions(paths["test"]) == []
    assert read_precomputed(paths["test_features"]) == {}


def test_spec_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(min_tokens=4, max_mentions=2).validate()
    with pytest.raises(ValueError):
        WorkloadSpec(noise=-1).validate()


def test_missing_features_rejected(tmp_path):
    wl = generate(SMALL)
    paths = write_workload(wl, tmp_path)
    cat = load_catalog(paths["entities"], paths["embeddings"])
    with pytest.raises(DataError):
        to_examples(wl.splits["dev"], cat, {})
