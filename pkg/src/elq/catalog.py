"""Entity inventory with its frozen embedding matrix."""
import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from ._binary import read_matrix, write_matrix
from .encoder import split_tokens
from .errors import DataError, DimensionMismatch, DuplicateIdError, FormatError

MAX_DESCRIPTION_TOKENS = 128


def truncate_description(text: str, limit: int = MAX_DESCRIPTION_TOKENS) -> str:
    """Keep the leading words of ``text`` until ``limit`` tokens have been seen."""
    kept, count = [], 0
    for word in text.split():
        if count == limit:
            break
        kept.append(word)
        count += len(split_tokens(word))
    return " ".join(kept)


@dataclass(frozen=True)
class EntityRecord:
    id: str
    title: str
    description: str = ""

    @classmethod
    def ingest(cls, id: str, title: str, description: str = "") -> "EntityRecord":
        return cls(id, title, truncate_description(description))


@dataclass(frozen=True)
class EntityCatalog:
    records: Tuple[EntityRecord, ...]
    embeddings: np.ndarray  # m x h, float32, read-only
    _index_of: Dict[str, int] = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        emb = np.array(self.embeddings, dtype=np.float32, order="C")
        if emb.ndim != 2:
            raise DimensionMismatch(f"embedding matrix must be 2-d, got shape {emb.shape}")
        if emb.shape[0] != len(self.records):
            raise DimensionMismatch(
                f"{emb.shape[0]} embedding rows for {len(self.records)} records"
            )
        if not np.all(np.isfinite(emb)):
            row = int(np.argwhere(~np.isfinite(emb))[0, 0])
            raise DataError(f"non-finite embedding value in row {row}")
        emb.setflags(write=False)
        index_of = {}
        for k, rec in enumerate(self.records):
            if rec.id in index_of:
                raise DuplicateIdError(f"duplicate entity id {rec.id!r} at position {k}")
            index_of[rec.id] = k
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "_index_of", index_of)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.records)

    def index_of(self, entity_id: str) -> int:
        try:
            return self._index_of[entity_id]
        except KeyError:
            raise DataError(f"unknown entity id {entity_id!r}") from None

    def fingerprint(self) -> bytes:
        """Digest of the embedding bytes; ties index files to their catalog."""
        return hashlib.sha256(self.embeddings.tobytes()).digest()[:16]


def get_embedding(catalog: EntityCatalog, index: int) -> np.ndarray:
    if not 0 <= index < len(catalog):
        raise IndexError(f"entity index {index} out of range [0, {len(catalog)})")
    return catalog.embeddings[index]


def read_records(path) -> Tuple[EntityRecord, ...]:
    records, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = EntityRecord.ingest(
                    str(obj["id"]), str(obj["title"]), str(obj.get("description", ""))
                )
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed entity line ({exc})") from None
            if rec.id in seen:
                raise DuplicateIdError(
                    f"{path}:{lineno}: duplicate entity id {rec.id!r} (first seen on line {seen[rec.id]})"
                )
            seen[rec.id] = lineno
            records.append(rec)
    return tuple(records)


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as fh:
        matrix = read_matrix(fh, where=str(path))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after embedding matrix")
    return matrix


def load_catalog(records_path, embeddings_path) -> EntityCatalog:
    records = read_records(records_path)
    emb = read_embeddings(embeddings_path)
    if emb.shape[0] != len(records):
        raise DimensionMismatch(
            f"{embeddings_path} has {emb.shape[0]} rows but {records_path} has {len(records)} records"
        )
    return EntityCatalog(records, emb)


def save_catalog(catalog: EntityCatalog, records_path, embeddings_path) -> None:
    with open(records_path, "w", encoding="utf-8") as fh:
        for rec in catalog.records:
            fh.write(json.dumps({"id": rec.id, "title": rec.title, "description": rec.description}))
            fh.write("\n")
    with open(embeddings_path, "wb") as fh:
        write_matrix(fh, catalog.embeddings)


def build_catalog(records: Sequence[EntityRecord], embeddings) -> EntityCatalog:
    return EntityCatalog(tuple(records), np.asarray(embeddings, dtype=np.float32))
