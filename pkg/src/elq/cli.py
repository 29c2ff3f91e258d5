"""Command-line entry point: ``elq <command> ...``.

Exit status is 0 on success; on failure a one-line JSON object
``{"error": <category>, "message": ...}`` goes to stderr and the status is 2.
"""
import argparse
import csv
import json
import logging
import sys
from typing import List, Optional

from threadpoolctl import threadpool_limits

from . import data as data_io
from .catalog import load_catalog
from .decoder import DEFAULT_GAMMA, DecoderConfig
from .encoder import SyntheticEncoder, read_precomputed
from .errors import DimensionMismatch, ElqError
from .evalmetrics import el_only, md_only, weak_match
from .index import HnswParams, build, load_index, save_index
from .pipeline import bench, encode_all, link_all, tune_gamma
from .spans import DEFAULT_MAX_SPAN_LEN, HeadWeights
from .synthetic import WorkloadSpec, generate, write_workload
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("elq")


def _catalog_args(p):
    p.add_argument("--entities", required=True, help="entities JSONL")
    p.add_argument("--embeddings", required=True, help="entity embedding file")


def _decoder_args(p):
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--max-span-len", type=int, default=DEFAULT_MAX_SPAN_LEN)
    p.add_argument("--fallback", type=int, default=50)


def _decoder_config(args) -> DecoderConfig:
    return DecoderConfig(args.gamma, args.top_k, args.fallback, args.max_span_len)


def _features(path):
    return None if path is None else read_precomputed(path)


# --------------------------------------------------------------------------


def cmd_generate(args):
    spec = WorkloadSpec(
        n_entities=args.entities, dim=args.dim, n_train=args.train, n_dev=args.dev,
        n_test=args.test, min_tokens=args.min_tokens, max_tokens=args.max_tokens,
        min_mentions=args.min_mentions, max_mentions=args.max_mentions,
        noise=args.noise, seed=args.seed,
    )
    paths = write_workload(generate(spec), args.out)
    print(json.dumps(paths, indent=2))


def cmd_build_index(args):
    catalog = load_catalog(args.entities, args.embeddings)
    params = HnswParams(args.M, args.ef_construction, args.ef_search)
    index = build(catalog, args.index, params, args.seed)
    save_index(index, args.out)
    log.info("built %s index over %d entities -> %s", args.index, len(catalog), args.out)


def cmd_train(args):
    catalog = load_catalog(args.entities, args.embeddings)
    if args.dim is not None and args.dim != catalog.dim:
        raise DimensionMismatch(f"--dim {args.dim} does not match catalog dim {catalog.dim}")
    index = load_index(args.index_path, catalog)
    records = data_io.read_questions(args.data)
    features = _features(args.features)
    base_dim = args.base_dim or catalog.dim
    if features:
        base_dim = next(iter(features.values())).shape[1]
    encoder = SyntheticEncoder(seed=args.encoder_seed if args.encoder_seed is not None else args.seed,
                               base_dim=base_dim, dim=catalog.dim)
    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        max_grad_norm=args.max_grad_norm, warmup=args.warmup, n_negatives=args.negatives,
        max_span_len=args.max_span_len, seed=args.seed,
    )
    examples = data_io.to_examples(records, catalog, features)
    result = train(examples, encoder, HeadWeights.zeros(catalog.dim), catalog, index, config)
    save_checkpoint(args.out, result.encoder, result.heads, config)
    if args.loss_csv:
        with open(args.loss_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss_md", "loss_ed", "total"])
            for k, r in enumerate(result.history, start=1):
                w.writerow([k, repr(r.loss_md), repr(r.loss_ed), repr(r.total)])


def _load_model(args):
    catalog = load_catalog(args.entities, args.embeddings)
    index = load_index(args.index_path, catalog)
    encoder, heads, _ = load_checkpoint(args.checkpoint)
    if encoder.dim != catalog.dim:
        raise DimensionMismatch(f"checkpoint dim {encoder.dim} != catalog dim {catalog.dim}")
    return catalog, index, encoder, heads


def cmd_link(args):
    catalog, index, encoder, heads = _load_model(args)
    records = data_io.read_questions(args.questions)
    embs = encode_all(records, encoder, _features(args.features))
    linked = link_all(embs, heads, index, catalog, _decoder_config(args), args.threads)
    data_io.write_predictions(args.out, linked)


def cmd_tune_gamma(args):
    catalog, index, encoder, heads = _load_model(args)
    records = data_io.read_questions(args.questions)
    embs = encode_all(records, encoder, _features(args.features))
    best, table = tune_gamma(embs, records, heads, index, catalog, _decoder_config(args))
    print(json.dumps({"best_gamma": best, "f1": table}, indent=2))


def cmd_eval(args):
    records = data_io.read_questions(args.gold)
    gold = data_io.gold_tuples(records)
    if args.mode == "el-only":
        catalog, index, encoder, heads = _load_model(args)
        embs = encode_all(records, encoder, _features(args.features))
        report = el_only(gold, {e.question.id: e.matrix for e in embs}, index, catalog, args.top_k)
    else:
        if not args.predictions:
            raise ElqError("--predictions is required for this mode")
        pred = data_io.read_predictions(args.predictions)
        report = md_only(gold, pred) if args.mode == "md-only" else weak_match(gold, pred, strong=args.strong)
    print(report.table())
    payload = json.dumps(report.to_json(), sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)


def cmd_bench(args):
    if args.threads != 1:
        log.warning("bench always runs on one thread; ignoring --threads=%d", args.threads)
    with threadpool_limits(1):
        catalog, index, encoder, heads = _load_model(args)
        records = data_io.read_questions(args.questions)
        report = bench(records, encoder, heads, index, catalog, _decoder_config(args),
                       _features(args.features), args.repetitions)
    out = json.dumps(report.to_json(), sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(out + "\n")
    print(out)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic workload")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=1000)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--dev", type=int, default=250)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--min-tokens", type=int, default=8)
    p.add_argument("--max-tokens", type=int, default=12)
    p.add_argument("--min-mentions", type=int, default=1)
    p.add_argument("--max-mentions", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-index", help="build and save a search index")
    _catalog_args(p)
    p.add_argument("--index", choices=("exact", "hnsw"), default="hnsw")
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--ef-construction", type=int, default=200)
    p.add_argument("--ef-search", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train", help="train mention heads and question projection")
    _catalog_args(p)
    p.add_argument("--index-path", required=True)
    p.add_argument("--data", required=True, help="training questions JSONL")
    p.add_argument("--features", help="precomputed question features for --data")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--max-grad-norm", type=float, default=1.0)
    p.add_argument("--warmup", type=float, default=0.1)
    p.add_argument("--negatives", type=int, default=10)
    p.add_argument("--max-span-len", type=int, default=DEFAULT_MAX_SPAN_LEN)
    p.add_argument("--base-dim", type=int, default=None)
    p.add_argument("--dim", type=int, default=None, help="must equal the catalog dim if given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--encoder-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv")
    p.set_defaults(func=cmd_train)

    def model_args(p):
        _catalog_args(p)
        p.add_argument("--index-path", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--features")

    p = sub.add_parser("link", help="link questions, write predictions JSONL")
    model_args(p)
    p.add_argument("--questions", required=True)
    _decoder_args(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("tune-gamma", help="grid-search the threshold on held-out questions")
    model_args(p)
    p.add_argument("--questions", required=True)
    _decoder_args(p)
    p.set_defaults(func=cmd_tune_gamma)

    p = sub.add_parser("eval", help="score predictions against gold mentions")
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions")
    p.add_argument("--mode", choices=("full", "md-only", "el-only"), default="full")
    p.add_argument("--strong", action="store_true", help="exact-boundary matching (debug)")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--entities")
    p.add_argument("--embeddings")
    p.add_argument("--index-path")
    p.add_argument("--checkpoint")
    p.add_argument("--features")
    p.add_argument("--top-k", type=int, default=10)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-threaded per-stage inference timing")
    model_args(p)
    p.add_argument("--questions", required=True)
    _decoder_args(p)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and args.mode == "el-only":
        missing = [f for f in ("entities", "embeddings", "index_path", "checkpoint") if getattr(args, f) is None]
        if missing:
            return _fail("invalid_argument", f"el-only mode needs --{', --'.join(m.replace('_', '-') for m in missing)}")
    try:
        args.func(args)
    except ElqError as exc:
        return _fail(exc.category, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc))
    except ValueError as exc:
        return _fail("invalid_argument", str(exc))
    return 0


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
