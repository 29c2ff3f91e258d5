import numpy as np
import pytest
from hypothesis import settings

from elq.catalog import EntityRecord, build_catalog
from elq.encoder import QuestionEmbeddings, TokenizedQuestion
from elq.spans import HeadWeights

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_catalog(embeddings, prefix="E"):
    embeddings = np.asarray(embeddings, dtype=np.float32)
    records = [EntityRecord(f"{prefix}{k}", f"title {k}", "") for k in range(embeddings.shape[0])]
    return build_catalog(records, embeddings)


def make_emb(matrix, qid="q"):
    matrix = np.asarray(matrix, dtype=np.float64)
    tokens = tuple(f"t{k}" for k in range(matrix.shape[0]))
    return QuestionEmbeddings(TokenizedQuestion(qid, " ".join(tokens), tokens), matrix)


def random_heads(rng, dim, scale=1.0):
    return HeadWeights(*(rng.normal(0, scale, dim) for _ in range(3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
