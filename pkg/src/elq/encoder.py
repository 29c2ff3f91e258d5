"""Question tokenization and the desk-scale synthetic token encoder.

The encoder stands in for a transformer: every token string owns a fixed,
pseudo-random unit vector (its *base* embedding) and the only trainable part
is an affine projection from base space to the output dimension ``dim``.
"""
import hashlib
import string
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ._binary import read_matrix, write_matrix
from .errors import DataError, DimensionMismatch, FormatError, VersionMismatch

_EDGE_PUNCT = string.punctuation + "“”‘’«»¿¡…"

QUESTIONS_MAGIC = b"ELQQ"
QUESTIONS_VERSION = 1


@dataclass(frozen=True)
class TokenizedQuestion:
    id: str
    raw_text: str
    tokens: tuple

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class QuestionEmbeddings:
    question: TokenizedQuestion
    matrix: np.ndarray  # n x h

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.question.n:
            raise DimensionMismatch(
                f"question {self.question.id!r}: {self.matrix.shape[0]} rows for "
                f"{self.question.n} tokens"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataError(f"question {self.question.id!r}: non-finite embedding value")


def split_tokens(text: str) -> List[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges."""
    tokens = []
    for piece in text.lower().split():
        piece = piece.strip(_EDGE_PUNCT)
        if piece:
            tokens.append(piece)
    return tokens


def tokenize(raw_text: str, id: str = "") -> TokenizedQuestion:
    return TokenizedQuestion(id=id, raw_text=raw_text, tokens=tuple(split_tokens(raw_text)))


def _token_key(seed: int, token: str) -> int:
    digest = hashlib.blake2b(
        struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF) + token.encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def base_vector(seed: int, token: str, base_dim: int) -> np.ndarray:
    """Unit vector fully determined by (seed, token); Philox keyed by a 64-bit hash."""
    rng = np.random.Generator(np.random.Philox(key=_token_key(seed, token)))
    v = rng.standard_normal(base_dim)
    return v / np.linalg.norm(v)


@dataclass
class SyntheticEncoder:
    seed: int = 0
    base_dim: int = 64
    dim: int = 64
    projection: Optional[np.ndarray] = None  # base_dim x dim, trainable
    bias: Optional[np.ndarray] = None  # dim, trainable
    _cache: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.projection is None:
            self.projection = self.fixed_map().copy()
        if self.bias is None:
            self.bias = np.zeros(self.dim)
        self.projection = np.asarray(self.projection, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.projection.shape != (self.base_dim, self.dim) or self.bias.shape != (self.dim,):
            raise DimensionMismatch(
                f"projection {self.projection.shape} / bias {self.bias.shape} do not match "
                f"base_dim={self.base_dim}, dim={self.dim}"
            )

    def base(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            v = base_vector(self.seed, token, self.base_dim)
            v.setflags(write=False)
            self._cache[token] = v
        return v

    def base_matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.base_dim))
        return np.stack([self.base(t) for t in tokens])

    def fixed_map(self) -> np.ndarray:
        """Non-trainable base->output map: zero-padding identity, or a seeded
        Gaussian projection when the output is narrower than the base space."""
        if self.base_dim <= self.dim:
            return np.eye(self.base_dim, self.dim)
        rng = np.random.Generator(np.random.Philox(key=_token_key(self.seed, "\x00fixed-map")))
        return rng.standard_normal((self.base_dim, self.dim)) / np.sqrt(self.dim)

    def project(self, base: np.ndarray) -> np.ndarray:
        return base @ self.projection + self.bias

    def copy(self) -> "SyntheticEncoder":
        return SyntheticEncoder(
            self.seed, self.base_dim, self.dim, self.projection.copy(), self.bias.copy()
        )


def encode_question(
    encoder: SyntheticEncoder,
    question: TokenizedQuestion,
    base: Optional[np.ndarray] = None,
) -> QuestionEmbeddings:
    """Project the question's base rows to ``n x dim`` token embeddings.

    ``base`` overrides the hashed token vectors with precomputed features
    (see :func:`load_precomputed`).
    """
    if question.n == 0:
        raise DataError(f"question {question.id!r} has no tokens")
    if base is None:
        base = encoder.base_matrix(question.tokens)
    elif base.shape != (question.n, encoder.base_dim):
        raise DimensionMismatch(
            f"question {question.id!r}: base features {base.shape}, expected "
            f"({question.n}, {encoder.base_dim})"
        )
    return QuestionEmbeddings(question, encoder.project(np.asarray(base, dtype=np.float64)))


def synthetic_entity_embedding(encoder: SyntheticEncoder, title: str) -> np.ndarray:
    tokens = split_tokens(title)
    if not tokens:
        raise DataError(f"title {title!r} has no tokens")
    v = encoder.base_matrix(tokens).mean(axis=0) @ encoder.fixed_map()
    norm = np.linalg.norm(v)
    if not norm > 1e-12:
        raise DataError(f"title {title!r} averages to the zero vector")
    return v / norm


def save_precomputed(path, features: Mapping[str, np.ndarray]) -> None:
    """Write ``{question id: n x d matrix}`` in insertion order."""
    with open(path, "wb") as fh:
        fh.write(QUESTIONS_MAGIC + struct.pack("<II", QUESTIONS_VERSION, len(features)))
        for qid, matrix in features.items():
            raw = qid.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            write_matrix(fh, matrix)


def read_precomputed(path) -> Dict[str, np.ndarray]:
    features: Dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        head = fh.read(12)
        if not head:
            return features
        if len(head) != 12 or head[:4] != QUESTIONS_MAGIC:
            raise FormatError(f"{path}: not a question-embedding container")
        version, count = struct.unpack("<II", head[4:])
        if version != QUESTIONS_VERSION:
            raise VersionMismatch(f"{path}: container version {version}, expected {QUESTIONS_VERSION}")
        for k in range(count):
            (length,) = struct.unpack("<I", fh.read(4))
            qid = fh.read(length).decode("utf-8")
            features[qid] = read_matrix(fh, where=f"{path} entry {k}")
    return features


def load_precomputed(path, questions: Iterable[TokenizedQuestion]) -> List[QuestionEmbeddings]:
    """Pair stored matrices with their questions, checking ids and row counts.

    Rows are returned as stored (float64). With the default identity
    projection they are the question embeddings; a trained encoder consumes
    them as base features via ``encode_question(..., base=...)``.
    """
    by_id = {q.id: q for q in questions}
    out = []
    for qid, matrix in read_precomputed(path).items():
        if qid not in by_id:
            raise DataError(f"{path}: unknown question id {qid!r}")
        q = by_id[qid]
        if matrix.shape[0] != q.n:
            raise DimensionMismatch(
                f"{path}: question {qid!r} has {q.n} tokens but {matrix.shape[0]} rows"
            )
        out.append(QuestionEmbeddings(q, matrix.astype(np.float64)))
    return out
