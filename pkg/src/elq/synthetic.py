"""Desk-scale synthetic entity-linking workloads.

Entities get pseudo-word titles; each question is filler words with one or
more entity titles planted in it. The encoder's hashed token vectors carry no
structure of their own, so the vocabulary is rejection-sampled along a hidden
seeded direction: name tokens lie on its positive side and filler words on
its negative side, by at least ``margin``. That makes "is this token part of
a name" learnable by the linear mention heads. Planted tokens receive
Gaussian noise of scale ``noise`` in the precomputed question features.
"""
import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Tuple

import numpy as np

from .catalog import EntityRecord, build_catalog, save_catalog
from .data import QuestionRecord, write_questions
from .encoder import SyntheticEncoder, _token_key, save_precomputed, synthetic_entity_embedding

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_TITLE_LENGTHS = (1, 2, 3)
_TITLE_WEIGHTS = (0.3, 0.5, 0.2)
SPLITS = ("train", "dev", "test")


@dataclass
class WorkloadSpec:
    n_entities: int = 1000
    dim: int = 64
    n_train: int = 2000
    n_dev: int = 250
    n_test: int = 500
    min_tokens: int = 8
    max_tokens: int = 12
    min_mentions: int = 1
    max_mentions: int = 2
    noise: float = 0.1
    seed: int = 0
    filler_vocab: int = 60
    margin: float = 0.2

    def validate(self) -> None:
        if self.n_entities < 1 or self.dim < 1:
            raise ValueError("need at least one entity and dim >= 1")
        if not 1 <= self.min_mentions <= self.max_mentions:
            raise ValueError("need 1 <= min_mentions <= max_mentions")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        widest = self.max_mentions * max(_TITLE_LENGTHS) + self.max_mentions - 1
        if widest > self.min_tokens:
            raise ValueError(
                f"cannot pack {self.max_mentions} mentions of up to {max(_TITLE_LENGTHS)} tokens "
                f"(plus separators) into {self.min_tokens}-token questions"
            )
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass
class Workload:
    spec: WorkloadSpec
    encoder: SyntheticEncoder
    records: List[EntityRecord]
    embeddings: np.ndarray
    splits: Dict[str, List[QuestionRecord]]
    features: Dict[str, Dict[str, np.ndarray]]


def _direction(seed: int, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=_token_key(seed, "\x00entity-direction")))
    d = rng.standard_normal(dim)
    return d / np.linalg.norm(d)


def _pseudo_word(rng: np.random.Generator) -> str:
    syllables = rng.integers(2, 5)
    return "".join(
        _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
        for _ in range(syllables)
    )


def _vocab(rng, encoder: SyntheticEncoder, direction, size: int, sign: float, margin: float, taken: set) -> List[str]:
    words: List[str] = []
    while len(words) < size:
        w = _pseudo_word(rng)
        if w in taken:
            continue
        taken.add(w)
        if sign * float(encoder.base(w) @ direction) > margin:
            words.append(w)
    return words


def generate(spec: WorkloadSpec) -> Workload:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    encoder = SyntheticEncoder(seed=spec.seed, base_dim=spec.dim, dim=spec.dim)
    direction = _direction(spec.seed, spec.dim)
    taken: set = set()
    lengths = rng.choice(_TITLE_LENGTHS, size=spec.n_entities, p=_TITLE_WEIGHTS)
    # every name token belongs to exactly one title
    names = _vocab(rng, encoder, direction, int(lengths.sum()), 1.0, spec.margin, taken)
    fillers = _vocab(rng, encoder, direction, spec.filler_vocab, -1.0, spec.margin, taken)
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    titles: List[Tuple[str, ...]] = [
        tuple(names[bounds[k] : bounds[k + 1]]) for k in range(spec.n_entities)
    ]
    records = []
    embeddings = np.empty((spec.n_entities, spec.dim), np.float32)
    for k, title in enumerate(titles):
        text = " ".join(w.capitalize() for w in title)
        records.append(EntityRecord.ingest(f"E{k:05d}", text, f"{text} is synthetic entity number {k}."))
        embeddings[k] = synthetic_entity_embedding(encoder, text)

    splits: Dict[str, List[QuestionRecord]] = {}
    features: Dict[str, Dict[str, np.ndarray]] = {}
    counts = dict(zip(SPLITS, (spec.n_train, spec.n_dev, spec.n_test)))
    for split in SPLITS:
        splits[split], features[split] = [], {}
        for qn in range(counts[split]):
            qid = f"{split}-{qn:05d}"
            rec, feats = _question(rng, spec, encoder, qid, titles, records, fillers)
            splits[split].append(rec)
            features[split][qid] = feats
    return Workload(spec, encoder, records, embeddings, splits, features)


def _question(rng, spec, encoder, qid, titles, records, fillers):
    n = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    k = int(rng.integers(spec.min_mentions, spec.max_mentions + 1))
    ents = rng.choice(len(titles), size=k, replace=False)
    mention_tokens = sum(len(titles[e]) for e in ents)
    n_fill = n - mention_tokens
    # k + 1 gaps; interior gaps hold at least one filler so mentions never touch
    gaps = np.zeros(k + 1, np.int64)
    gaps[1:k] = 1
    gaps += rng.multinomial(n_fill - (k - 1), np.full(k + 1, 1.0 / (k + 1)))
    tokens, display, planted, mentions = [], [], [], []
    for slot in range(k + 1):
        for _ in range(gaps[slot]):
            w = fillers[rng.integers(len(fillers))]
            tokens.append(w)
            display.append(w)
            planted.append(False)
        if slot < k:
            e = int(ents[slot])
            start = len(tokens)
            for w in titles[e]:
                tokens.append(w)
                display.append(w.capitalize())
                planted.append(True)
            mentions.append((start, len(tokens) - 1, records[e].id))
    text = " ".join(display)
    text = text[0].upper() + text[1:] + "?"
    base = encoder.base_matrix(tokens)
    mask = np.array(planted)
    if spec.noise > 0:
        base[mask] += rng.normal(0.0, spec.noise, size=(int(mask.sum()), spec.dim))
    return QuestionRecord(qid, text, tuple(mentions)), base.astype(np.float32)


def write_workload(workload: Workload, out_dir) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "entities": os.path.join(out_dir, "entities.jsonl"),
        "embeddings": os.path.join(out_dir, "entities.emb"),
        "manifest": os.path.join(out_dir, "workload.json"),
    }
    catalog = build_catalog(workload.records, workload.embeddings)
    save_catalog(catalog, paths["entities"], paths["embeddings"])
    for split in SPLITS:
        paths[split] = os.path.join(out_dir, f"{split}.jsonl")
        paths[f"{split}_features"] = os.path.join(out_dir, f"{split}.qemb")
        write_questions(paths[split], workload.splits[split])
        save_precomputed(paths[f"{split}_features"], workload.features[split])
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump({"spec": asdict(workload.spec), "encoder_seed": workload.encoder.seed,
                   "base_dim": workload.encoder.base_dim}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
