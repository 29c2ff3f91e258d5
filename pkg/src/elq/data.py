"""JSONL question / prediction files."""
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .catalog import EntityCatalog
from .decoder import LinkedPrediction
from .encoder import TokenizedQuestion, tokenize
from .errors import DataError, FormatError
from .spans import SpanCandidate
from .training import TrainingExample


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    text: str
    mentions: Tuple[Tuple[int, int, str], ...] = ()  # (start, end, entity id)

    def tokenized(self) -> TokenizedQuestion:
        return tokenize(self.text, self.id)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "mentions": [{"start": s, "end": e, "entity_id": eid} for s, e, eid in self.mentions],
        }


def read_questions(path) -> List[QuestionRecord]:
    out, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                mentions = tuple(
                    (int(m["start"]), int(m["end"]), str(m["entity_id"]))
                    for m in obj.get("mentions", [])
                )
                rec = QuestionRecord(str(obj["id"]), str(obj["text"]), mentions)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed question line ({exc})") from None
            if rec.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate question id {rec.id!r}")
            seen.add(rec.id)
            out.append(rec)
    return out


def write_questions(path, records: Iterable[QuestionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def to_examples(
    records: Sequence[QuestionRecord],
    catalog: EntityCatalog,
    features: Optional[Mapping[str, np.ndarray]] = None,
) -> List[TrainingExample]:
    examples = []
    for rec in records:
        q = rec.tokenized()
        base = None
        if features is not None:
            if rec.id not in features:
                raise DataError(f"no precomputed features for question {rec.id!r}")
            base = np.asarray(features[rec.id], dtype=np.float64)
            if base.shape[0] != q.n:
                raise DataError(f"question {rec.id!r}: {q.n} tokens but {base.shape[0]} feature rows")
        mentions = tuple((SpanCandidate(s, e), catalog.index_of(eid)) for s, e, eid in rec.mentions)
        examples.append(TrainingExample(q, mentions, base))
    return examples


def gold_tuples(records: Iterable[QuestionRecord]) -> Dict[str, Set[Tuple[str, int, int]]]:
    return {rec.id: {(eid, s, e) for s, e, eid in rec.mentions} for rec in records}


def prediction_line(qid: str, predictions: Sequence[LinkedPrediction]) -> str:
    return json.dumps({"id": qid, "predictions": [p.to_json() for p in predictions]})


def write_predictions(path, items: Iterable[Tuple[str, Sequence[LinkedPrediction]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, preds in items:
            fh.write(prediction_line(qid, preds) + "\n")


def read_predictions(path) -> Dict[str, Set[Tuple[str, int, int]]]:
    out: Dict[str, Set[Tuple[str, int, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["id"])] = {
                    (str(p["entity_id"]), int(p["start"]), int(p["end"])) for p in obj["predictions"]
                }
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed prediction line ({exc})") from None
    return out
