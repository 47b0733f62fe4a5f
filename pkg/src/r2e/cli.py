"""Operator command line: every pipeline stage plus serving.

Progress goes to stderr, results to stdout. Exit codes: 0 success, 2 usage
error, 3 data error, 4 stage-order error (missing dependency artifact).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import corpus as C
from . import encoder as E
from . import metrics as M
from . import reasoner as R
from . import synthworld as SW
from .attribution import LOGIT, PROBABILITY
from .pipeline import (Defaults, ModelBundle, StageError, build_index_stage,
                       ingest, train_reasoner_stage, train_retriever_stage)
from .ranking import write_ranking_jsonl
from .service import load_config, create_app
from .service.config import ServiceConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_STAGE = 4


class DataError(RuntimeError):
    pass


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _policy_from_args(args) -> C.TemporalPolicy | C.RandomPolicy:
    if args.policy == "temporal":
        if args.split_year is None:
            raise DataError("temporal policy requires --split-year")
        return C.TemporalPolicy(args.split_year, args.s2_fraction, args.seed)
    if args.sizes is None:
        raise DataError("random policy requires --sizes n1,n2,n3")
    sizes = tuple(int(x) for x in args.sizes.split(","))
    if len(sizes) != 3:
        raise DataError("--sizes must have exactly three comma-separated counts")
    return C.RandomPolicy(sizes, args.seed)


def cmd_ingest(args) -> int:
    policy = _policy_from_args(args)
    summary = ingest(args.docs, args.dictionary, args.out, policy,
                     template_path=args.template_records,
                     template=args.template, min_count=args.min_count)
    _progress(f"ingested {summary['documents']} documents -> "
              f"{summary['passages']} masked passages")
    _emit(summary)
    return EXIT_OK


def cmd_train_retriever(args) -> int:
    config = None
    if args.layers or args.hidden:
        vocab = C.Vocab.load(Path(args.corpus) / "vocab.json")
        config = E.EncoderConfig(
            vocab_size=vocab.size, layers=args.layers or 2,
            heads=args.heads or 4, hidden=args.hidden or 32,
            intermediate=args.intermediate or 2 * (args.hidden or 32))
    hyper = E.TrainingHyper(epochs=args.epochs, batch_size=args.batch_size,
                            lr=args.lr, weight_decay=args.weight_decay,
                            seed=args.seed)
    summary = train_retriever_stage(args.corpus, args.out, config, hyper,
                                    log=sys.stderr)
    _emit(summary)
    return EXIT_OK


def cmd_build_index(args) -> int:
    splits = tuple(s.strip() for s in args.splits.split(","))
    summary = build_index_stage(args.corpus, args.retriever, args.out,
                                evidence_splits=splits,
                                include_templated=not args.no_templated,
                                log=sys.stderr)
    _emit(summary)
    return EXIT_OK


def cmd_train_reasoner(args) -> int:
    retr_cfg = json.loads((Path(args.retriever) / "config.json").read_text())
    hidden = retr_cfg["config"]["hidden"]
    config = R.ReasonerConfig(
        hidden=hidden, k=args.k, heads=args.heads,
        inducing_points=args.inducing_points,
        encoder_blocks=args.encoder_blocks, decoder_blocks=args.decoder_blocks,
        pair_encoder=args.pair_encoder)
    hyper = R.ReasonerHyper(epochs=args.epochs, batch_size=args.batch_size,
                            lr=args.lr, weight_decay=args.weight_decay,
                            seed=args.seed)
    summary = train_reasoner_stage(args.corpus, args.retriever, args.index,
                                   args.out, config, hyper,
                                   query_split=args.query_split, log=sys.stderr)
    _emit(summary)
    return EXIT_OK


def _bundle_from_args(args) -> ModelBundle:
    return ModelBundle.load(
        args.corpus, args.retriever, args.reasoner, args.index,
        defaults=Defaults(k=args.k or 64, c=0.5 if args.c is None else args.c),
        dtype=np.float64 if getattr(args, "f64", False) else np.float32)


def cmd_rank(args) -> int:
    bundle = _bundle_from_args(args)
    ranking, _ = bundle.rank(args.query, k=args.k, c=args.c,
                             threads=getattr(args, "threads", None))
    entries = sorted(ranking.entries, key=lambda e: e.rank)
    if args.top_n:
        entries = entries[:args.top_n]
    if args.out:
        write_ranking_jsonl(args.out, ranking)
        _progress(f"wrote ranking to {args.out}")
    for e in entries:
        print(json.dumps({"answer_id": e.answer_id, "logit": e.logit,
                          "prob": e.prob, "f_c": e.f_c,
                          "corrected_logit": e.corrected_logit, "rank": e.rank}))
    return EXIT_OK


def cmd_explain(args) -> int:
    bundle = _bundle_from_args(args)
    ranking, details = bundle.rank(args.query, k=args.k, c=args.c)
    if args.answer not in details:
        raise DataError(f"unknown answer id {args.answer!r}")
    space = LOGIT if args.space == "logit" else PROBABILITY
    result = bundle.explain(details[args.answer], output_space=space,
                            m_permutations=args.m, seed=args.seed, c=args.c)
    _emit(bundle.explain_payload(details[args.answer], result))
    return EXIT_OK


def _model_rankings(bundle: ModelBundle, model: str, queries, k, c):
    for q in queries:
        if model == "r2e":
            ranking, _ = bundle.rank(q, k=k, c=c)
        elif model == "mlm":
            ranking = bundle.rank_mlm(q)
        elif model == "mcs":
            ranking = bundle.rank_mcs(q, k=k)
        elif model == "freq":
            ranking = bundle.rank_freq()
        else:
            raise DataError(f"unknown model {model!r}")
        yield ranking


def cmd_evaluate(args) -> int:
    bundle = _bundle_from_args(args)
    evalset = M.read_eval_set(args.eval_set)
    if args.task == "ranking":
        rows = [(q, a) for q, a, label in
                zip(evalset.queries, evalset.answer_ids, evalset.labels)
                if label == 1]
        queries = [q for q, _ in rows]
        golds = [a for _, a in rows]
        _progress(f"ranking {len(queries)} queries with model {args.model}")
        rankings = list(_model_rankings(bundle, args.model, queries,
                                        args.k, args.c))
        cutoffs = tuple(int(x) for x in args.cutoffs.split(","))
        met = M.ranking_metrics(rankings, golds, mode=args.mode, cutoffs=cutoffs)
        _emit({"task": "ranking", "model": args.model, "mode": met.mode,
               "n_queries": met.n_queries, "mrr": met.mrr, "mr": met.mr,
               "hits": {str(c): v for c, v in met.hits.items()}})
    else:
        _progress(f"scoring {len(evalset.queries)} pairs with model {args.model}")
        scores = []
        for q, a in zip(evalset.queries, evalset.answer_ids):
            if args.model == "r2e":
                ranking, _ = bundle.rank(q, k=args.k, c=args.c)
            else:
                ranking = next(_model_rankings(bundle, args.model, [q],
                                               args.k, args.c))
            scores.append(ranking.entry(a).corrected_logit)
        out = {"task": "binary", "model": args.model,
               "auroc": M.auroc(evalset.labels, scores),
               "n": len(scores)}
        if args.threshold is not None:
            rs = M.relative_success(evalset.labels, np.array(scores),
                                    args.threshold)
            out["relative_success"] = rs.rs
            out["rs_ci"] = [rs.ci_low, rs.ci_high] if rs.ci_defined else None
        _emit(out)
    return EXIT_OK


def cmd_synthworld(args) -> int:
    spec = SW.SynthWorldSpec(
        n_entities=args.entities, signature_size=args.signature_size,
        n_noise_tokens=args.noise_tokens, neighbor_overlap=args.overlap,
        mixing_weight=args.mixing_weight,
        sentences_per_entity=args.sentences_per_entity,
        frequency_slope=args.frequency_slope)
    world = SW.generate_synth_world(spec, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "docs.jsonl", "w") as f:
        for doc in world.docs:
            for i, text in enumerate(doc.sentences):
                f.write(json.dumps({"doc_id": doc.doc_id, "year": doc.year,
                                    "sent_idx": i, "text": text}) + "\n")
    with open(out / "dictionary.tsv", "w") as f:
        for entity in world.entity_ids:
            for surface in world.dictionary.surfaces_of(entity):
                f.write(f"{entity}\t{surface.upper()}\n")
    qs = M.BinaryEvalSet(
        tuple(h.passage.masked_text for h in world.heldout),
        tuple(h.gold_answer for h in world.heldout),
        np.ones(len(world.heldout), dtype=int),
        np.zeros(len(world.heldout)),
        tuple(h.passage.year for h in world.heldout))
    M.write_eval_set(out / "heldout.csv", qs)
    _emit({"docs": len(world.docs), "heldout_queries": len(world.heldout),
           "entities": len(world.entity_ids), "out": str(out)})
    return EXIT_OK


def cmd_serve(args) -> int:
    config = load_config(args.config) if args.config else ServiceConfig()
    overrides = {}
    for key in ("corpus_dir", "retriever_dir", "reasoner_dir", "index_path",
                "host", "port", "default_k", "default_c", "static_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if overrides:
        from dataclasses import replace
        config = replace(config, **overrides)
    if args.dump_config:
        from dataclasses import asdict
        _emit(asdict(config))
        return EXIT_OK
    import uvicorn
    app = create_app(config=config)
    if app.state.bundle is None:
        raise StageError("model artifacts not found; train them before serving")
    _progress(f"serving on {config.host}:{config.port}")
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return EXIT_OK


def _add_bundle_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", required=True, help="corpus artifact directory")
    p.add_argument("--retriever", required=True, help="retriever artifact directory")
    p.add_argument("--reasoner", required=True, help="scorer artifact directory")
    p.add_argument("--index", required=True, help="evidence index file")
    p.add_argument("--k", type=int, default=None, help="evidence per answer")
    p.add_argument("--c", type=float, default=None,
                   help="frequency correction strength in [0,1], default 0.5")
    p.add_argument("--f64", action="store_true", help="run inference in float64")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="r2e",
        description="Evidence-ranked cloze answering pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for parallel stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the masked corpus")
    p.add_argument("--docs", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=("temporal", "random"), default="random")
    p.add_argument("--split-year", type=int, default=None)
    p.add_argument("--s2-fraction", type=float, default=0.2)
    p.add_argument("--sizes", default=None, help="random policy: n1,n2,n3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--template-records", default=None,
                   help="CSV of structured records to template into sentences")
    p.add_argument("--template", default=C.DEFAULT_TEMPLATE)
    p.add_argument("--min-count", type=int, default=1)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train-retriever", help="train the masked-token encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--intermediate", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_retriever)

    p = sub.add_parser("build-index", help="embed evidence and build the index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--retriever", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="S1", help="comma list, e.g. S1,S2")
    p.add_argument("--no-templated", action="store_true",
                   help="exclude templated passages from the index")
    p.set_defaults(fn=cmd_build_index)

    p = sub.add_parser("train-reasoner", help="train the evidence-set scorer")
    p.add_argument("--corpus", required=True)
    p.add_argument("--retriever", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--inducing-points", type=int, default=32)
    p.add_argument("--encoder-blocks", type=int, default=2)
    p.add_argument("--decoder-blocks", type=int, default=2)
    p.add_argument("--pair-encoder", choices=("conv", "hadamard"), default="conv")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--query-split", default="S2")
    p.set_defaults(fn=cmd_train_reasoner)

    p = sub.add_parser("rank", help="rank the full answer set for a query")
    _add_bundle_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--top-n", type=int, default=None)
    p.add_argument("--out", default=None, help="also write JSON-lines here")
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("explain", help="attribute one answer's score to evidence")
    _add_bundle_args(p)
    p.add_argument("--query", required=True)
    p.add_argument("--answer", required=True)
    p.add_argument("--space", choices=("probability", "logit"),
                   default="probability")
    p.add_argument("--m", type=int, default=None, help="permutations (default 100)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("evaluate", help="run metrics over an eval-set CSV")
    _add_bundle_args(p)
    p.add_argument("--eval-set", required=True)
    p.add_argument("--task", choices=("ranking", "binary"), default="ranking")
    p.add_argument("--model", choices=("r2e", "mlm", "mcs", "freq"),
                   default="r2e")
    p.add_argument("--mode", choices=("micro", "macro"), default="micro")
    p.add_argument("--cutoffs", default="10,200")
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("synthworld", help="generate a synthetic corpus fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=12)
    p.add_argument("--signature-size", type=int, default=3)
    p.add_argument("--noise-tokens", type=int, default=20)
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--mixing-weight", type=float, default=0.8)
    p.add_argument("--sentences-per-entity", type=int, default=40)
    p.add_argument("--frequency-slope", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synthworld)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--corpus-dir", dest="corpus_dir", default=None)
    p.add_argument("--retriever-dir", dest="retriever_dir", default=None)
    p.add_argument("--reasoner-dir", dest="reasoner_dir", default=None)
    p.add_argument("--index-path", dest="index_path", default=None)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--default-k", dest="default_k", type=int, default=None)
    p.add_argument("--default-c", dest="default_c", type=float, default=None)
    p.add_argument("--static-dir", dest="static_dir", default=None)
    p.add_argument("--dump-config", action="store_true",
                   help="print the effective config and exit")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as e:
        print(f"stage order error: {e}", file=sys.stderr)
        return EXIT_STAGE
    except (DataError, C.CorpusError, M.MetricsError, E.EncoderError,
            R.ReasonerError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
