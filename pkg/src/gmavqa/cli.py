"""Command-line entry point: ``gma <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import DESK, dump_config, load_config
from .data import materialize, read_dataset, write_dataset
from .question import ConlluError, EmbeddingTable, build_question_graph, load_embeddings, question_layout, read_conllu_file
from .synthetic import synthetic_dataset
from .visual import build_visual_graph, read_detections

log = logging.getLogger("gmavqa")


class UsageError(Exception):
    pass


def _cmd_train(args) -> int:
    from .train import train

    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    out = args.out or cfg.out_dir
    result = train(cfg, out_dir=out, resume=args.resume)
    last = result.metrics[-1] if result.metrics else {}
    print(json.dumps({"out_dir": str(out), "epochs_run": len(result.metrics), "last": last}, sort_keys=True))
    return 0


def _load_examples_for(cfg, data_path, split):
    raws, n_answers, _ = read_dataset(data_path)
    if n_answers != cfg.n_answers:
        raise ValueError(f"{data_path} has {n_answers} answers but the checkpoint expects {cfg.n_answers}")
    if split != "all":
        raws = [r for r in raws if r.split == split]
    return [materialize(r, cfg.K1, cfg.K2, cfg.iou_threshold) for r in raws]


def _cmd_eval(args) -> int:
    from .train import evaluate

    ck = load_checkpoint(args.checkpoint)
    examples = _load_examples_for(ck.cfg, args.data, args.split)
    metrics = evaluate(ck.net, ck.cfg, examples)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _cmd_grad_check(args) -> int:
    from .checks import model_grad_check

    report, seconds = model_grad_check(args.size, args.seed, eps=args.eps)
    worst = max(report.per_input, key=report.per_input.get)
    print(f"max relative error {report.max_rel_error:.3e} over {report.coords_checked} coordinates "
          f"(worst: {worst}) in {seconds:.1f}s")
    return 0 if report.max_rel_error < 1e-4 else 1


def _cmd_build_graphs(args) -> int:
    from .gru import GruParams

    dets = read_detections(args.detections)
    parses = read_conllu_file(args.parses)
    if len(dets) != len(parses):
        raise ValueError(f"{len(dets)} detection sets but {len(parses)} parses")
    emb = load_embeddings(args.embeddings, oov=args.oov, seed=args.seed) if args.embeddings \
        else EmbeddingTable(300, oov="hashed", seed=args.seed)
    by_id = {}
    for p in parses:
        for c in p.comments:
            if c.startswith("image_id"):
                by_id[c.split("=", 1)[1].strip()] = p
    out = []
    gru = GruParams.init(np.random.default_rng(args.seed), emb.dim, args.d) if args.encode else None
    for i, ds in enumerate(dets):
        parse = by_id.get(ds.image_id, parses[i])
        vg = build_visual_graph(ds, args.iou, args.k1)
        doc = {
            "image_id": ds.image_id,
            "visual": {"nodes": vg.nodes.data.tolist(), "edges": vg.edges.astype(int).tolist(),
                       "mask": vg.node_mask.tolist()},
        }
        if gru is not None:
            qg = build_question_graph(parse, emb, gru, args.k2)
            lay = qg.layout
            doc["question_features"] = {"nodes": qg.nodes.data.tolist(), "q": qg.q.data.tolist()}
        else:
            if emb.oov == "error":
                missing = [w for w in parse.words if w not in emb]
                if missing:
                    raise KeyError(f"out-of-vocabulary words {missing}")
            lay = question_layout(parse, emb.embed(parse.words), args.k2)
        doc["question"] = {"words": lay.words, "edges": lay.edges.astype(int).tolist(),
                           "mask": lay.node_mask.tolist(), "groups": lay.groups}
        out.append(doc)
    Path(args.out).write_text(json.dumps(out))
    print(f"wrote {len(out)} graph pairs to {args.out}")
    return 0


def _cmd_dump_attention(args) -> int:
    from .model import forward

    ck = load_checkpoint(args.checkpoint)
    cfg = ck.cfg
    if args.data:
        examples = _load_examples_for(cfg, args.data, "all")
    else:
        raws = synthetic_dataset(cfg, cfg.seed)
        examples = [materialize(r, cfg.K1, cfg.K2, cfg.iou_threshold) for r in raws]
    if not 0 <= args.example < len(examples):
        raise ValueError(f"example {args.example} out of range (dataset has {len(examples)})")
    ex = examples[args.example]
    fw = forward(ck.net, [ex], cfg)
    vis_rows = np.flatnonzero(ex.visual.node_mask)
    q_rows = np.flatnonzero(ex.question.node_mask)
    modules = [tr.for_segment(vis_rows, q_rows).to_json(i) for i, tr in enumerate(fw.state.traces)]
    doc = {"example": args.example, "image_id": ex.visual.image_id, "words": ex.question.words,
           "label": ex.label, "predicted": int(fw.prediction.answer[0]), "modules": modules}
    Path(args.out).write_text(json.dumps(doc, indent=1))
    print(f"wrote attention for example {args.example} ({len(modules)} modules) to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else DESK
    if args.n_train is not None:
        cfg = cfg.with_(n_train=args.n_train)
    if args.n_val is not None:
        cfg = cfg.with_(n_val=args.n_val)
    raws = synthetic_dataset(cfg, args.seed)
    write_dataset(args.out, raws, cfg.n_answers, meta={"seed": args.seed, "generator": "synthetic",
                                                      "config": dump_config(cfg)})
    print(f"wrote {len(raws)} examples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gma", description="Graph matching attention for VQA")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: out_dir from the config)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="all", help="train, val or all (default)")
    e.set_defaults(func=_cmd_eval)

    g = sub.add_parser("grad-check", help="finite-difference check of every model gradient")
    g.add_argument("--size", choices=["small", "medium"], default="small")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=1e-5, help="central-difference step")
    g.set_defaults(func=_cmd_grad_check)

    b = sub.add_parser("build-graphs", help="build visual and question graphs from files")
    b.add_argument("--detections", required=True)
    b.add_argument("--parses", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--embeddings")
    b.add_argument("--oov", choices=["zero", "hashed", "error"], default="hashed")
    b.add_argument("--k1", type=int, default=100)
    b.add_argument("--k2", type=int, default=14)
    b.add_argument("--iou", type=float, default=0.3)
    b.add_argument("--d", type=int, default=16, help="node feature width when --encode is set")
    b.add_argument("--encode", action="store_true", help="also run a freshly initialised Bi-GRU")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_cmd_build_graphs)

    a = sub.add_parser("dump-attention", help="export affinity and attention maps as JSON")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--example", type=int, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--data", help="dataset file (default: regenerate the checkpoint's synthetic data)")
    a.set_defaults(func=_cmd_dump_attention)

    s = sub.add_parser("synth", help="write a synthetic dataset file")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--config")
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-val", type=int)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gma {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, CheckpointError, ConlluError) as exc:
        print(f"gma {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
