"""Joint training of the mention heads and the question projection.

The entity embeddings never change; hard negatives are mined from one
prebuilt index on every step using the current mention representations.
"""
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .catalog import EntityCatalog
from .encoder import SyntheticEncoder, TokenizedQuestion
from .errors import DataError, FormatError, VersionMismatch
from .index import MipsIndex, search
from .linker import MentionRep, log_softmax
from .spans import DEFAULT_MAX_SPAN_LEN, HeadWeights, SpanCandidate, span_arrays, token_scores

log = logging.getLogger(__name__)

PARAM_NAMES = ("projection", "bias", "w_start", "w_end", "w_mention")


@dataclass(frozen=True)
class TrainingExample:
    question: TokenizedQuestion
    mentions: Tuple[Tuple[SpanCandidate, int], ...]  # (gold span, gold entity index)
    base: Optional[np.ndarray] = None  # precomputed n x base_dim features

    def __post_init__(self):
        spans = sorted(sp for sp, _ in self.mentions)
        for sp in spans:
            if not 0 <= sp.start <= sp.end < self.question.n:
                raise DataError(f"{self.question.id}: gold span [{sp.start}, {sp.end}] outside n={self.question.n}")
        for a, b in zip(spans, spans[1:]):
            if a.overlaps(b):
                raise DataError(f"{self.question.id}: overlapping gold spans {a} and {b}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-2
    max_grad_norm: float = 1.0
    warmup: float = 0.1
    n_negatives: int = 10
    max_span_len: int = DEFAULT_MAX_SPAN_LEN
    seed: int = 0
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("epochs", "batch_size", "n_negatives", "max_span_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.max_grad_norm <= 0 or not 0 <= self.warmup <= 1:
            raise ValueError("invalid lr / max_grad_norm / warmup")


@dataclass(frozen=True)
class LossReport:
    loss_md: float
    loss_ed: float

    @property
    def total(self) -> float:
        return self.loss_md + self.loss_ed


@dataclass
class TrainResult:
    encoder: SyntheticEncoder
    heads: HeadWeights
    history: List[LossReport] = field(default_factory=list)


# --------------------------------------------------------------------------
# losses


def md_loss(q: np.ndarray, heads: HeadWeights, gold: Sequence[SpanCandidate], max_len: int = DEFAULT_MAX_SPAN_LEN):
    """Mean binary cross-entropy over every candidate span.

    Returns ``(loss, grads)`` with grads for ``w_start``, ``w_end``,
    ``w_mention`` and the token matrix ``q``.
    """
    n = q.shape[0]
    starts, ends = span_arrays(n, max_len)
    labels = np.zeros(starts.shape[0])
    for sp in gold:
        if len(sp) > max_len:
            log.warning("gold span [%d, %d] longer than %d tokens is skipped", sp.start, sp.end, max_len)
            continue
        # spans are ordered by (start, end)
        labels[_span_position(n, max_len, sp)] = 1.0
    s = token_scores(q, heads)
    prefix = np.concatenate([[0.0], np.cumsum(s[:, 2])])
    z = s[starts, 0] + s[ends, 1] + (prefix[ends + 1] - prefix[starts])
    N = z.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z))
    dz = (_sigmoid(z) - labels) / N
    d_start = np.bincount(starts, dz, minlength=n)
    d_end = np.bincount(ends, dz, minlength=n)
    diff = np.bincount(starts, dz, minlength=n + 1) - np.bincount(ends + 1, dz, minlength=n + 1)
    d_mention = np.cumsum(diff)[:n]
    grads = {
        "w_start": q.T @ d_start,
        "w_end": q.T @ d_end,
        "w_mention": q.T @ d_mention,
        "q": np.outer(d_start, heads.w_start) + np.outer(d_end, heads.w_end)
        + np.outer(d_mention, heads.w_mention),
    }
    return loss, grads


def _span_position(n: int, max_len: int, sp: SpanCandidate) -> int:
    before = sum(min(max_len, n - i) for i in range(sp.start))
    return before + (sp.end - sp.start)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def ed_loss(rep: MentionRep, gold: int, negatives: Sequence[int], catalog: EntityCatalog):
    """``-log p(gold)`` under a softmax over {gold} ∪ negatives.

    Returns ``(loss, d_loss/d_y)``.
    """
    cands = [gold] + [k for k in dict.fromkeys(int(k) for k in negatives) if k != gold]
    X = catalog.embeddings[cands].astype(np.float64)
    logp = log_softmax(X @ rep.y)
    p = np.exp(logp)
    p[0] -= 1.0
    return float(-logp[0]), X.T @ p


def mine_hard_negatives(index: MipsIndex, rep: MentionRep, gold: int, count: int = 10) -> List[int]:
    hits = search(index, rep.y, count + 1)
    return [i for i, _ in hits if i != gold][:count]


def example_loss(
    encoder: SyntheticEncoder,
    heads: HeadWeights,
    example: TrainingExample,
    catalog: EntityCatalog,
    negatives: Optional[Sequence[Sequence[int]]] = None,
    index: Optional[MipsIndex] = None,
    n_negatives: int = 10,
    max_len: int = DEFAULT_MAX_SPAN_LEN,
):
    """Total loss of one question and gradients for every trainable array.

    Negatives are either given per gold mention or mined from ``index``.
    """
    base = example.base if example.base is not None else encoder.base_matrix(example.question.tokens)
    q = encoder.project(base)
    gold_spans = [sp for sp, _ in example.mentions]
    l_md, g = md_loss(q, heads, gold_spans, max_len)
    dq = g.pop("q")
    l_ed = 0.0
    usable = [(sp, e) for sp, e in example.mentions if len(sp) <= max_len]
    for k, (sp, gold) in enumerate(usable):
        rep = MentionRep(sp, q[sp.start : sp.end + 1].mean(axis=0))
        if negatives is not None:
            negs = negatives[k]
        else:
            negs = mine_hard_negatives(index, rep, gold, n_negatives)
        loss, dy = ed_loss(rep, gold, negs, catalog)
        l_ed += loss
        dq[sp.start : sp.end + 1] += dy / len(sp)
    g["projection"] = base.T @ dq
    g["bias"] = dq.sum(axis=0)
    return LossReport(l_md, l_ed), g


# --------------------------------------------------------------------------
# gradient utilities


def grad_check(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]], x: np.ndarray, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    x = np.array(x, dtype=np.float64)
    value, analytic = fun(x)
    if not np.isfinite(value):
        raise ValueError("loss is not finite at the base point")
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.size):
        step = np.zeros_like(x).ravel()
        step[i] = eps
        step = step.reshape(x.shape)
        f_plus, _ = fun(x + step)
        f_minus, _ = fun(x - step)
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"loss is not finite around coordinate {i}")
        numeric = (f_plus - f_minus) / (2 * eps)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
    return worst


def get_params(encoder: SyntheticEncoder, heads: HeadWeights) -> Dict[str, np.ndarray]:
    return {
        "projection": encoder.projection,
        "bias": encoder.bias,
        "w_start": heads.w_start,
        "w_end": heads.w_end,
        "w_mention": heads.w_mention,
    }


def flatten(params: Dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in PARAM_NAMES])


def unflatten(vec: np.ndarray, encoder: SyntheticEncoder) -> Tuple[SyntheticEncoder, HeadWeights]:
    b, h = encoder.base_dim, encoder.dim
    sizes = [b * h, h, h, h, h]
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    enc = SyntheticEncoder(encoder.seed, b, h, parts[0].reshape(b, h).copy(), parts[1].copy())
    return enc, HeadWeights(parts[2].copy(), parts[3].copy(), parts[4].copy())


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def lr_at(step: int, total: int, base_lr: float, warmup: float) -> float:
    """Linear warmup over the first ``warmup`` fraction of steps, then linear decay to 0."""
    warm = int(round(warmup * total))
    if step < warm:
        return base_lr * (step + 1) / warm
    return base_lr * max(0.0, (total - step) / max(1, total - warm))


class AdamW:
    def __init__(self, params: Dict[str, np.ndarray], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# --------------------------------------------------------------------------


def train(
    dataset: Sequence[TrainingExample],
    encoder: SyntheticEncoder,
    heads: HeadWeights,
    catalog: EntityCatalog,
    index: MipsIndex,
    config: TrainConfig = TrainConfig(),
    on_epoch: Optional[Callable[[int, LossReport], None]] = None,
) -> TrainResult:
    """Train copies of ``encoder``'s projection and ``heads``; inputs are untouched."""
    if not dataset:
        raise DataError("empty training set")
    n_gold = sum(len(ex.mentions) for ex in dataset)
    n_usable = sum(len(sp) <= config.max_span_len for ex in dataset for sp, _ in ex.mentions)
    if n_gold and not n_usable:
        raise DataError(f"every gold span is longer than max_span_len={config.max_span_len}; nothing to train")
    if index.size != len(catalog) or index.fingerprint != catalog.fingerprint():
        raise DataError("index was not built over this catalog")

    encoder = encoder.copy()
    heads = heads.copy()
    params = get_params(encoder, heads)
    opt = AdamW(params, config.betas, config.adam_eps, config.weight_decay)
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    total = config.epochs * steps_per_epoch
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        sum_md = sum_ed = 0.0
        for b in range(steps_per_epoch):
            batch = order[b * config.batch_size : (b + 1) * config.batch_size]
            acc = {k: np.zeros_like(v) for k, v in params.items()}
            for i in batch:
                report, g = example_loss(
                    encoder, heads, dataset[i], catalog, index=index,
                    n_negatives=config.n_negatives, max_len=config.max_span_len,
                )
                sum_md += report.loss_md
                sum_ed += report.loss_ed
                for k in acc:
                    acc[k] += g[k]
            for k in acc:
                acc[k] /= len(batch)
            clip_grad_norm(acc, config.max_grad_norm)
            opt.step(acc, lr_at(step, total, config.lr, config.warmup))
            step += 1
        report = LossReport(sum_md / len(dataset), sum_ed / len(dataset))
        history.append(report)
        log.info("epoch %d: md=%.4f ed=%.4f", epoch + 1, report.loss_md, report.loss_ed)
        if on_epoch is not None:
            on_epoch(epoch, report)
    return TrainResult(encoder, heads, history)


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"ELQC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, encoder: SyntheticEncoder, heads: HeadWeights, config: Optional[TrainConfig] = None) -> None:
    meta = {
        "encoder": {"seed": encoder.seed, "base_dim": encoder.base_dim, "dim": encoder.dim},
        "config": asdict(config) if config is not None else None,
    }
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(raw)) + raw)
        for arr in get_params(encoder, heads).values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[SyntheticEncoder, HeadWeights, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    meta = json.loads(raw[12 : 12 + meta_len])
    enc = meta["encoder"]
    vec = np.frombuffer(raw, "<f8", offset=12 + meta_len).astype(np.float64)
    expected = enc["base_dim"] * enc["dim"] + 4 * enc["dim"]
    if vec.size != expected:
        raise FormatError(f"{path}: {vec.size} parameters, expected {expected}")
    template = SyntheticEncoder(enc["seed"], enc["base_dim"], enc["dim"])
    encoder, heads = unflatten(vec, template)
    return encoder, heads, meta
