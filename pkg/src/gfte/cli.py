"""Command-line entry point: gen / train / eval / predict / recover / gradcheck.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from gfte import recover as R
from gfte.cellgraph import GraphError, build_graph, complete_graph, label_edges
from gfte.ingest import io as dio
from gfte.ingest.scitsr import load_scitsr_dir
from gfte.ingest.synth import GenSpec, GenSpecError, generate_tables
from gfte.model import (
    CheckpointError,
    ModelError,
    load_checkpoint,
    predict_relations,
    save_checkpoint,
)
from gfte.nn.gradcheck import GradcheckError
from gfte.table import EdgeSample, TableError
from gfte.train import (
    ConstantPredictor,
    ModelPredictor,
    NumericFailure,
    OraclePredictor,
    TrainConfig,
    TrainingError,
    dataset_hash,
    evaluate,
    format_accuracy_table,
    run_ablation,
    train,
)

log = logging.getLogger("gfte")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

RUN_CONFIG_KEYS = {"seed", "gen", "train", "eval"}
EVAL_KEYS = {"k", "threshold", "complete"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run config ------------------------------------------------------------------------


def load_run_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: line {e.lineno}: {e.msg}") from None
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - RUN_CONFIG_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown config key(s) {sorted(unknown)}")
    unknown = set(cfg.get("eval", {})) - EVAL_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown eval key(s) {sorted(unknown)}")
    return cfg


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, ensure_ascii=False).encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def train_config(args, run_cfg: dict) -> TrainConfig:
    d = dict(run_cfg.get("train", {}))
    seed = args.seed if args.seed is not None else run_cfg.get("seed", d.get("seed"))
    if seed is not None:
        d["seed"] = seed
    for flag in ("variant", "epochs", "lr", "k"):
        v = getattr(args, flag, None)
        if v is not None:
            d[flag] = v
    try:
        return TrainConfig.from_dict(d)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad train config: {e}") from None


# -- dataset loading -------------------------------------------------------------------


def load_tables(path: str, fmt: str):
    """Load and filter a dataset; returns (tables, rejections as (id, reasons))."""
    if fmt == "scitsr":
        tables, failed = load_scitsr_dir(path)
        kept, rejected = [], [(stem, reason) for stem, reason in failed]
        for t in tables:
            codes, msg = dio.rejection_reasons(t)
            if codes:
                rejected.append((t.source_id, f"{','.join(codes)}: {msg}"))
            else:
                kept.append(t)
        return kept, rejected
    m = dio.load_manifest(path)
    accepted, rejected = dio.filter_dataset(m)
    return dio.load_dataset(accepted), [(r.entry.id, f"{','.join(r.reasons)}: {r.message}") for r in rejected]


def _report_rejections(rejected) -> None:
    for sid, reason in rejected:
        log.warning("rejected %s: %s", sid, reason)


def load_models(ckpt_dir: str):
    d = Path(ckpt_dir)
    mh = load_checkpoint(d / "h.ckpt", expect={"direction": "h"})
    mv = load_checkpoint(d / "v.ckpt", expect={"direction": "v"})
    if mh.config.variant is not mv.config.variant:
        raise ModelError("horizontal and vertical checkpoints are different variants")
    if mh.config.vocab_fingerprint != mv.config.vocab_fingerprint:
        raise ModelError("horizontal and vertical checkpoints use different vocabularies")
    return mh, mv


# -- commands ------------------------------------------------------------------------------


def _gen_chunk(args):
    spec, start, count = args
    return generate_tables(spec, start, count)


def cmd_gen(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read spec {args.spec}: {e}") from None
    if not isinstance(raw, dict):
        raise UsageError("spec file must hold a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = GenSpec.from_dict(raw)
    jobs = max(1, args.jobs)
    if jobs == 1:
        tables = generate_tables(spec)
    else:
        step = -(-spec.n_tables // jobs)
        parts = [(spec, s, min(step, spec.n_tables - s)) for s in range(0, spec.n_tables, step)]
        with ProcessPoolExecutor(jobs) as ex:
            tables = [t for chunk in ex.map(_gen_chunk, parts) for t in chunk]
    spec_d = spec.to_dict()
    m = dio.write_dataset(tables, args.out, extra={"gen_spec": spec_d, "config_fingerprint": fingerprint(spec_d)})
    print(json.dumps({"out": str(args.out), "stats": m.stats}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config)
    cfg = train_config(args, run_cfg)
    tables, rejected = load_tables(args.dataset, args.format)
    _report_rejections(rejected)
    if not tables:
        raise TrainingError("no accepted tables in dataset")

    def progress(d, r):
        log.info("%s epoch %d loss %.5f train %.4f heldout %s", d, r.epoch, r.train_loss, r.train_accuracy, r.heldout_accuracy)

    res = train(cfg, tables, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.model_h, out / "h.ckpt")
    save_checkpoint(res.model_v, out / "v.ckpt")
    (out / "loss.csv").write_text(f"# config_fingerprint={cfg.fingerprint()}\n" + res.curves_csv(), encoding="utf-8")

    summary = {
        "config": cfg.to_dict(),
        "config_fingerprint": cfg.fingerprint(),
        "dataset": dataset_hash(tables),
        "n_train": len(res.train_idx),
        "n_heldout": len(res.heldout_idx),
        "rejected": [sid for sid, _ in rejected],
        "curves": {d: [vars(r) for r in recs] for d, recs in res.curves.items()},
    }
    write_json(out / "train.json", summary)
    last_h, last_v = res.curves["h"][-1], res.curves["v"][-1]
    print(
        f"trained {cfg.variant}: heldout accuracy h={last_h.heldout_accuracy} v={last_v.heldout_accuracy} "
        f"-> {out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    run_cfg = load_run_config(args.config)
    ev = run_cfg.get("eval", {})
    k = args.k if args.k is not None else ev.get("k", 6)
    threshold = args.threshold if args.threshold is not None else ev.get("threshold", 0.5)
    complete = args.complete or ev.get("complete", False)
    tables, rejected = load_tables(args.dataset, args.format)
    _report_rejections(rejected)
    if not tables:
        raise dio.IngestError("no accepted tables in dataset")
    name = args.name or Path(args.dataset).resolve().name

    if args.ablation:
        cfg = train_config(args, run_cfg)
        rep = run_ablation(cfg, tables)
        text = rep.table_text() + "\n"
        payload = rep.to_dict() | {"rejected": [s for s, _ in rejected]}
    else:
        chosen = sum(bool(x) for x in (args.checkpoints, args.oracle, args.constant is not None))
        if chosen != 1:
            raise UsageError("eval needs exactly one of --checkpoints, --oracle, --constant (or --ablation)")
        if args.oracle:
            predictor = OraclePredictor()
        elif args.constant is not None:
            predictor = ConstantPredictor(args.constant)
        else:
            predictor = ModelPredictor(*load_models(args.checkpoints))
        rep = evaluate(
            predictor,
            tables,
            k=k,
            threshold=threshold,
            complete=complete,
            fingerprint={"threshold": threshold, "format": args.format},
        )
        text = format_accuracy_table([(name, rep.accuracy_h, rep.accuracy_v)], first_header="Dataset") + "\n"
        payload = rep.to_dict(per_edge=args.per_edge) | {
            "dataset_name": name,
            "rejected": [s for s, _ in rejected],
        }
    payload["config_fingerprint"] = fingerprint(payload.get("fingerprint", payload.get("config", {})))
    sys.stdout.write(text)
    if args.out:
        write_json(args.out, payload)
    if args.text_out:
        Path(args.text_out).write_text(text, encoding="utf-8")
    return EXIT_OK


def _relations_payload(mh, mv, t, g, edges, p_h, p_v, k) -> dict:
    return {
        "source_id": t.source_id,
        "k": k,
        "config_fingerprint": {"h": mh.config.fingerprint(), "v": mv.config.fingerprint()},
        "nodes": [vars(n) for n in g.nodes],
        "edges": [
            {"src": e.src, "dst": e.dst, "p_h": float(ph), "p_v": float(pv), "label_h": e.label_h, "label_v": e.label_v}
            for e, ph, pv in zip(edges, p_h, p_v)
        ],
    }


def cmd_predict(args) -> int:
    mh, mv = load_models(args.checkpoints)
    t = dio.load_table(args.table, args.image)
    k = args.k if args.k is not None else mh.config.k
    g = build_graph(t, k, labeled=False)
    edges, p_h, p_v = predict_relations(mh, mv, t, g, args.threshold)
    emit(json.dumps(_relations_payload(mh, mv, t, g, edges, p_h, p_v, k), indent=1, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_recover(args) -> int:
    from gfte.cellgraph import NodeGeometry

    texts = None
    if args.relations:
        try:
            with open(args.relations, encoding="utf-8") as f:
                rel = json.load(f)
            nodes = [NodeGeometry(**n) for n in rel["nodes"]]
            edges = [EdgeSample(e["src"], e["dst"], e["label_h"], e["label_v"]) for e in rel["edges"]]
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise dio.ParseError(f"bad relations file: {e}", path=args.relations) from None
        fp = rel.get("config_fingerprint")
    else:
        if not (args.table and args.image):
            raise UsageError("recover needs --relations, or --table and --image with --checkpoints/--oracle")
        t = dio.load_table(args.table, args.image)
        texts = {c.id: c.text for c in t.cells}
        if args.oracle:
            g = label_edges(complete_graph(t), t) if args.complete else build_graph(t, args.k or 6)
            nodes, edges, fp = list(g.nodes), list(g.edges), "oracle"
        elif args.checkpoints:
            mh, mv = load_models(args.checkpoints)
            g = build_graph(t, args.k or mh.config.k, labeled=False)
            edges, _, _ = predict_relations(mh, mv, t, g, args.threshold)
            nodes = list(g.nodes)
            fp = {"h": mh.config.fingerprint(), "v": mv.config.fingerprint()}
        else:
            raise UsageError("recover from a table needs --checkpoints or --oracle")
    s = R.recover_structure(nodes, edges)
    if args.format == "json":
        text = json.dumps(s.to_json() | {"config_fingerprint": fp}, indent=1, sort_keys=True) + "\n"
    elif args.format == "csv":
        text = s.to_csv(texts)
    else:
        text = f"<!-- config_fingerprint: {json.dumps(fp, sort_keys=True)} -->\n" + s.to_html(texts)
    emit(text, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from gfte.verify import format_report, run_all

    reports = run_all(args.seed or 0)
    print(format_report(reports, args.tolerance))
    worst = max(err for rep in reports.values() for err in rep.values())
    if not worst < args.tolerance:
        print(f"gradcheck failed: max relative error {worst:.3e} >= {args.tolerance:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gfte", description="Graph-based table structure recognition toolkit.")
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides config files)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-table stages")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("spec", help="GenSpec JSON file")
    g.add_argument("out", help="output dataset directory")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train horizontal and vertical models")
    t.add_argument("dataset")
    t.add_argument("out", help="checkpoint directory")
    t.add_argument("--config")
    t.add_argument("--format", choices=["native", "scitsr"], default="native")
    t.add_argument("--variant", choices=["pos", "pos_text", "full"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--k", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-direction edge accuracy")
    e.add_argument("dataset")
    e.add_argument("--checkpoints")
    e.add_argument("--oracle", action="store_true", help="predict ground truth (sanity check)")
    e.add_argument("--constant", type=float, help="predict this probability for every edge")
    e.add_argument("--ablation", action="store_true", help="train and compare all three variants")
    e.add_argument("--format", choices=["native", "scitsr"], default="native")
    e.add_argument("--name", help="dataset label in the text report")
    e.add_argument("--complete", action="store_true", help="score all cell pairs instead of KNN edges")
    e.add_argument("--config")
    e.add_argument("--k", type=int)
    e.add_argument("--threshold", type=float)
    e.add_argument("--variant", choices=["pos", "pos_text", "full"])
    e.add_argument("--epochs", type=int)
    e.add_argument("--lr", type=float)
    e.add_argument("--out", help="JSON report path")
    e.add_argument("--text-out", help="also write the text table here")
    e.add_argument("--per-edge", action="store_true", help="include per-edge predictions in JSON")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict relations for one table")
    pr.add_argument("checkpoints")
    pr.add_argument("table")
    pr.add_argument("image")
    pr.add_argument("--k", type=int)
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    rc = sub.add_parser("recover", help="rebuild the row/column grid from relations")
    rc.add_argument("--relations", help="JSON written by `gfte predict`")
    rc.add_argument("--table")
    rc.add_argument("--image")
    rc.add_argument("--checkpoints")
    rc.add_argument("--oracle", action="store_true")
    rc.add_argument("--complete", action="store_true", help="with --oracle, use all cell pairs")
    rc.add_argument("--k", type=int)
    rc.add_argument("--threshold", type=float, default=0.5)
    rc.add_argument("--format", choices=["json", "csv", "html"], default="json")
    rc.add_argument("--out")
    rc.set_defaults(func=cmd_recover)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every layer and the full loss")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, GenSpecError) as e:
        print(f"gfte: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, GradcheckError, FloatingPointError) as e:
        print(f"gfte: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (dio.IngestError, GraphError, TableError, CheckpointError, ModelError, TrainingError, OSError, ValueError) as e:
        print(f"gfte: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
