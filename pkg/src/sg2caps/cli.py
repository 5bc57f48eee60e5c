"""Command-line entry point: ``sg2caps <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input data, 2 numerical failure,
3 acceptance threshold not met.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from .graph import GraphError, dumps_graph, graph_from_dict, union
from .hoi import HOIGraphBuilder, VerbTables, and_fallback, load_hoi_record
from .nn import NonFiniteError
from .nn.checkpoint import _atomic_write

log = logging.getLogger("sg2caps")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3


class DataError(Exception):
    """Unusable input: missing files, malformed JSON, schema violations."""


class AcceptanceError(Exception):
    """A run completed but missed its acceptance thresholds."""


# I/O helpers -----------------------------------------------------------------

def _schema(name: str) -> dict:
    text = resources.files("sg2caps.data").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def read_json(path, schema: str | None = None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    raw = path.read_bytes()
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at byte offset {exc.pos}: {exc.msg}") from exc
    if schema is not None:
        try:
            jsonschema.validate(obj, _schema(schema))
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise DataError(f"{path}: {where}: {exc.message}") from exc
    return obj


def write_text(path, text: str) -> None:
    _atomic_write(Path(path), text.encode())


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def json_files(path) -> list[Path]:
    """A single file, or every ``*.json`` in a directory, in name order."""
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise DataError(f"{path}: no such file or directory")
    return sorted(p for p in path.iterdir() if p.suffix == ".json")


def n_threads() -> int:
    value = os.environ.get("SG2CAPS_THREADS")
    if not value:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise DataError(f"SG2CAPS_THREADS must be a positive integer, got {value!r}")
    if n < 1:
        raise DataError(f"SG2CAPS_THREADS must be a positive integer, got {value!r}")
    return n


def _pmap(fn, items):
    with ThreadPoolExecutor(max_workers=n_threads()) as pool:
        return list(pool.map(fn, items))


def load_graphs(path) -> list:
    def one(p):
        try:
            return graph_from_dict(read_json(p, "scene_graph"))
        except GraphError as exc:
            raise DataError(f"{p}: {exc}") from exc
    return _pmap(one, json_files(path))


def load_config(args) -> dict:
    cfg = read_json(args.config, "config") if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _out(args) -> Path:
    return Path(args.out or ".")


def _stamp(graph, out: Path) -> Path:
    return out / f"{graph.image_id}.json"


# commands --------------------------------------------------------------------

def cmd_preprocess(args, cfg) -> int:
    from .graph import validate
    from .pseudolabel import PipelineConfig, process

    pc = dict(cfg.get("pipeline", {}))
    for flag, key in (("obj_conf", "obj_conf_min"), ("nms_iou", "nms_iou"),
                      ("rel_conf", "rel_conf_min"), ("attr_conf", "attr_conf_min")):
        if getattr(args, flag) is not None:
            pc[key] = getattr(args, flag)
    pipeline = PipelineConfig(**pc)
    graphs = load_graphs(args.input)
    for g in graphs:
        report = validate(g)
        if not report.ok:
            raise DataError(f"graph {g.image_id!r}: " + "; ".join(report.violations))
    cleaned = _pmap(lambda g: process(g, pipeline), graphs)
    out = _out(args)
    for g, c in zip(graphs, cleaned):
        log.info("%s: %d/%d nodes kept, %d/%d edges kept", g.image_id, len(c.nodes),
                 len(g.nodes), len(c.edges), len(g.edges))
        write_text(_stamp(c, out), dumps_graph(c))
    print(f"preprocessed {len(cleaned)} graph(s) into {out}")
    return EXIT_OK


def _verb_tables(args, cfg):
    path = args.verb_tables or cfg.get("paths", {}).get("verb_tables")
    return VerbTables.from_dict(read_json(path, "verb_tables")) if path else VerbTables.default()


def cmd_build_hoi(args, cfg) -> int:
    records = [read_json(p, "hoi_input") for p in json_files(args.input)]
    vocab = None
    if args.caption_vocab:
        vocab = read_json(args.caption_vocab)
    builder = HOIGraphBuilder(_verb_tables(args, cfg), vocab, fallback=False).fit()
    try:
        parsed = [load_hoi_record(r) for r in records]
        graphs = builder.transform(parsed)
    except (GraphError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    out = _out(args)
    for g in graphs:
        write_text(_stamp(g, out), dumps_graph(g))
    print(f"built {len(graphs)} HOI graph(s) into {out}")
    return EXIT_OK


def cmd_build_vsg(args, cfg) -> int:
    pls = load_graphs(args.pseudolabels)
    hois = {}
    if args.hoi and Path(args.hoi).exists():
        hois = {g.image_id: g for g in load_graphs(args.hoi)}
    merged = []
    for pl in pls:
        try:
            g = union(pl, hois[pl.image_id]) if pl.image_id in hois else pl
        except GraphError as exc:
            raise DataError(str(exc)) from exc
        merged.append(and_fallback(g))
    out = _out(args)
    for g in merged:
        write_text(_stamp(g, out), dumps_graph(g))
    print(f"built {len(merged)} VSG(s) into {out}")
    return EXIT_OK


def cmd_parse_tsg(args, cfg) -> int:
    from .tsg import Lexicon, parse_caption

    path = args.lexicon or cfg.get("paths", {}).get("lexicon")
    lexicon = Lexicon.from_dict(read_json(path, "lexicon")) if path else Lexicon.default()
    entries = read_json(args.captions, "captions")
    out = _out(args)
    count = 0
    for entry in entries:
        for k, caption in enumerate(entry["captions"]):
            g = parse_caption(caption, lexicon, entry["image_id"])
            write_text(out / f"{entry['image_id']}.{k}.json", dumps_graph(g))
            count += 1
    print(f"parsed {count} caption(s) into {out}")
    return EXIT_OK


def _dataset(args, graphs, need_captions=True):
    from .trainer import TrainingExample
    from .validation import check_captions

    caps = {}
    if args.captions:
        caps = {e["image_id"]: e["captions"] for e in read_json(args.captions, "captions")}
    feats = {}
    if getattr(args, "features", None):
        feats = {e["image_id"]: np.asarray(e["pool6"], dtype=np.float64)
                 for e in read_json(args.features, "global_features")}
    data = []
    for g in graphs:
        if need_captions and g.image_id not in caps:
            raise DataError(f"no captions for image {g.image_id!r}")
        # caption-only runs carry a placeholder reference that is never scored
        refs = check_captions([caps[g.image_id]], 1)[0] if g.image_id in caps else [["?"]]
        if feats and g.image_id not in feats:
            raise DataError(f"no global feature for image {g.image_id!r}")
        data.append(TrainingExample(g, refs, feats.get(g.image_id)))
    return data


def cmd_train(args, cfg) -> int:
    from .model import CaptionModel, ModelConfig, build_vocabularies
    from .trainer import TrainConfig, train

    data = _dataset(args, load_graphs(args.graphs))
    if not data:
        raise DataError("no training graphs found")
    mc = dict(cfg.get("model", {}))
    for key in ("d", "H", "E", "max_len"):
        if getattr(args, key) is not None:
            mc[key] = getattr(args, key)
    if args.use_summary:
        mc["use_summary"] = True
    if args.no_boxes:
        mc["use_boxes"] = False
    if args.attend_relations:
        mc["attend_relations"] = True
    if mc.get("use_summary") and data[0].global_feature is None:
        raise DataError("--use-summary needs --features")
    tc = dict(cfg.get("train", {}))
    for key in ("batch_size", "lr", "scst_lr", "lr_decay", "decay_every", "xe_iterations",
                "scst_iterations", "accumulate"):
        if getattr(args, key) is not None:
            tc[key] = getattr(args, key)
    scst_lr = tc.pop("scst_lr", None)
    seed = cfg.get("seed", 0)
    vocabs = build_vocabularies([e.graph for e in data], [e.captions for e in data])
    model = CaptionModel(ModelConfig(**mc), vocabs, seed=seed)
    out = _out(args)
    counts = model.parameter_count()
    print(json.dumps({"parameters": counts}, sort_keys=True))
    xe = TrainConfig(seed=seed, **tc)
    train(data, model, xe, curve_path=out / "curve_xe.csv")
    if xe.scst_iterations:
        scst = TrainConfig(**{**xe.to_dict(), "mode": "scst",
                              "lr": xe.lr if scst_lr is None else scst_lr})
        train(data, model, scst, curve_path=out / "curve_scst.csv")
    model.save(out / "model", {"train": xe.to_dict()})
    print(f"saved checkpoint {out / 'model'}")
    return EXIT_OK


def _load_model(args):
    from .model import CaptionModel

    path = Path(args.checkpoint)
    manifest = path if path.suffix == ".json" else path.with_name(path.name + ".json")
    if not manifest.exists():
        raise DataError(f"checkpoint {manifest} not found")
    return CaptionModel.load(path)


def caption_records(model, data) -> list[dict]:
    from .decoder import log_prob_batch
    from .trainer import encode_examples, predict_tokens

    tokens = predict_tokens(data, model)
    records = []
    for e, toks in zip(data, tokens):
        ids = model.words.encode(toks)
        ended = len(toks) < model.config.max_len
        lp = log_prob_batch([ids], encode_examples([e], model), model.decoder, [ended])[0]
        records.append({"image_id": e.graph.image_id, "caption": " ".join(toks),
                        "tokens": toks, "logprob": float(lp)})
    return records


def cmd_caption(args, cfg) -> int:
    model = _load_model(args)
    data = _dataset(args, load_graphs(args.graphs), need_captions=False)
    records = caption_records(model, data)
    write_json(_out(args) / "captions.json", records)
    print(f"captioned {len(records)} image(s)")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .trainer import evaluate

    model = _load_model(args)
    data = _dataset(args, load_graphs(args.graphs))
    if not data:
        raise DataError("no graphs to evaluate")
    report = evaluate(data, model)
    write_json(_out(args) / "report.json", report)
    print(json.dumps({k: report[k] for k in ("B1", "B4", "R", "C")}, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .gradsuite import ABS_TOLERANCE, TOLERANCE, passed, run_suite

    seed0 = cfg.get("seed", 0)
    worst: dict[str, float] = {}
    failures = []
    for s in range(seed0, seed0 + args.seeds):
        res = run_suite(s)
        for k, v in res.items():
            worst[k] = max(worst.get(k, 0.0), v)
        if not passed(res):
            failures.append(s)
    rel = max(v for k, v in worst.items() if not k.endswith("/abs_below_floor"))
    absb = max((v for k, v in worst.items() if k.endswith("/abs_below_floor")), default=0.0)
    for k in sorted(worst):
        print(f"{k:32s} {worst[k]:.3e}")
    print(f"max relative error {rel:.3e} (tolerance {TOLERANCE:g}); "
          f"max absolute error below floor {absb:.3e} (tolerance {ABS_TOLERANCE:g})")
    if failures:
        raise AcceptanceError(f"gradient check failed for seed(s) {failures}")
    return EXIT_OK


def cmd_toy_e2e(args, cfg) -> int:
    from .experiments import run_toy_e2e

    seed = cfg.get("seed", 1)
    out = _out(args)
    res = run_toy_e2e(out, seed=seed, xe_iterations=args.xe_iterations,
                      scst_iterations=args.scst_iterations)
    print(f"XE: {res.xe_iterations} iterations, loss {res.xe_loss:.4f}, "
          f"exact match {res.exact_match:.2%}")
    print(f"CIDEr-D after XE {res.cider_xe:.4f}, after SCST {res.cider_scst:.4f}")
    print(f"decode steps {res.decode_steps}, max |sum(alpha)-1| {res.max_alpha_sum_error:.2e}, "
          f"max |sum(p)-1| {res.max_dist_sum_error:.2e}")
    problems = []
    if not res.xe_ok:
        problems.append("XE overfit thresholds not reached")
    if not res.sums_ok:
        problems.append("distribution sums outside 1e-12")
    if problems:
        raise AcceptanceError("; ".join(problems))
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--config", default=default, help="JSON run configuration")
        parser.add_argument("--seed", type=int, default=default, help="master seed (u64)")
        parser.add_argument("--out", default=default, help="output directory")
        parser.add_argument("-v", "--verbose", action="store_true", default=default or False)

    p = argparse.ArgumentParser(prog="sg2caps", description="Scene-graph captioning toolkit.")
    global_flags(p, None)
    # the same flags are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given before it
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("preprocess", cmd_preprocess, "clean raw pseudolabel graphs")
    sp.add_argument("input", help="graph JSON file or directory")
    sp.add_argument("--obj-conf", type=float)
    sp.add_argument("--nms-iou", type=float)
    sp.add_argument("--rel-conf", type=float)
    sp.add_argument("--attr-conf", type=float)

    sp = add("build-hoi", cmd_build_hoi, "turn HOI detections into partial graphs")
    sp.add_argument("input", help="HOI JSON file or directory")
    sp.add_argument("--verb-tables")
    sp.add_argument("--caption-vocab", help="JSON list of caption words for label mapping")

    sp = add("build-vsg", cmd_build_vsg, "merge cleaned pseudolabels with HOI graphs")
    sp.add_argument("pseudolabels", help="directory of cleaned pseudolabel graphs")
    sp.add_argument("--hoi", help="directory of HOI graphs (optional)")

    sp = add("parse-tsg", cmd_parse_tsg, "parse captions into textual scene graphs")
    sp.add_argument("captions", help="captions JSON")
    sp.add_argument("--lexicon")

    sp = add("train", cmd_train, "train a captioner (XE, then optional SCST)")
    sp.add_argument("graphs")
    sp.add_argument("captions")
    sp.add_argument("--features", help="global feature JSON")
    for flag, typ in (("--batch-size", int), ("--lr", float), ("--scst-lr", float),
                      ("--lr-decay", float), ("--decay-every", int), ("--xe-iterations", int),
                      ("--scst-iterations", int), ("--accumulate", int), ("--d", int),
                      ("--H", int), ("--E", int), ("--max-len", int)):
        sp.add_argument(flag, type=typ)
    sp.add_argument("--use-summary", action="store_true")
    sp.add_argument("--no-boxes", action="store_true")
    sp.add_argument("--attend-relations", action="store_true")

    sp = add("caption", cmd_caption, "greedy-caption graphs with a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("graphs")
    sp.add_argument("--features")
    sp.set_defaults(captions=None)

    sp = add("eval", cmd_eval, "score greedy captions against references")
    sp.add_argument("checkpoint")
    sp.add_argument("graphs")
    sp.add_argument("captions")
    sp.add_argument("--features")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of every gradient")
    sp.add_argument("--seeds", type=int, default=100)

    sp = add("toy-e2e", cmd_toy_e2e, "toy corpus: XE, SCST, evaluation, threshold checks")
    sp.add_argument("--xe-iterations", type=int, default=2000)
    sp.add_argument("--scst-iterations", type=int, default=500)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        with threadpool_limits(limits=n_threads()):
            return args.func(args, cfg)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GraphError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AcceptanceError as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPT


if __name__ == "__main__":
    sys.exit(main())
