"""Command-line front end: ``bsdh train|encode|query|eval|truncate``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_io
from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError, StateError
from .index import CodeDatabase, encode, load_db, query_bruteforce, query_lut, save_db
from .metrics import RelevanceJudge, evaluate, write_precision_curve, write_reports_csv, write_reports_jsonl
from .nn import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

log = logging.getLogger("bsdh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- configuration ------------------------------------------------------------

def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


# section -> key -> value parser; path-valued keys are listed below
SCHEMA = {
    "data": {
        "kind": str,
        # synthetic
        "classes": int, "per_class": int, "dim": int, "sigma": float, "seed": int,
        "query_per_class": int, "split_seed": int,
        # idx
        "images": str, "labels": str, "query_images": str, "query_labels": str, "limit": _opt_int,
        # csv
        "path": str, "query_path": str, "header": _bool,
    },
    "model": {"preset": str, "code_length": int, "width": float},
    "train": {
        "iterations": int, "k_hat": int, "o_hat": int, "triplet_budget": int,
        "negatives_per_pair": _opt_int, "lr": float, "lr_decay": float, "lr_decay_every": _opt_int,
        "momentum": float, "weight_decay": float, "lam": float, "clamp": _opt_float,
        "normalize_margin": _bool, "beta_start": float, "beta_end": float, "beta_shape": str,
        "seed": int, "checkpoint_every": int,
    },
    "output": {"checkpoint": str, "history": str},
}
INPUT_PATHS = {("data", k) for k in ("images", "labels", "query_images", "query_labels", "path", "query_path")}
OUTPUT_PATHS = {("output", "checkpoint"), ("output", "history")}


def read_config(path, overrides=()):
    """Parse an INI run file into ``{section: {key: value}}``; flags in ``overrides`` win.

    Relative paths are resolved against the config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw = {s: dict(cp.items(s)) for s in cp.sections()}
    for key, value in overrides:
        section, _, name = key.partition(".")
        raw.setdefault(section, {})[name] = value
    cfg = {}
    for section, items in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in items.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                value = SCHEMA[section][key](text)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
            if (section, key) in INPUT_PATHS | OUTPUT_PATHS:
                p = Path(value)
                value = p if p.is_absolute() else path.parent / p
            cfg.setdefault(section, {})[key] = value
    return cfg


def validate_paths(cfg, outputs=True):
    for section, key in sorted(INPUT_PATHS):
        p = cfg.get(section, {}).get(key)
        if p is not None and not Path(p).is_file():
            raise DataError(f"[{section}] {key}: file not found: {p}")
    if outputs:
        for section, key in sorted(OUTPUT_PATHS):
            p = cfg.get(section, {}).get(key)
            if p is not None and not Path(p).parent.is_dir():
                raise DataError(f"[{section}] {key}: directory does not exist: {Path(p).parent}")


def _need(cfg, section, key):
    try:
        return cfg[section][key]
    except KeyError:
        raise ConfigError(f"missing required key [{section}] {key}") from None


def load_dataset(cfg, part="train"):
    """Dataset for ``part`` in {train, query, all} as described by the [data] section."""
    d = cfg.get("data", {})
    kind = d.get("kind", "synthetic")
    if kind == "synthetic":
        ds = data_io.synthetic_clusters(
            _need(cfg, "data", "classes"), _need(cfg, "data", "per_class"),
            _need(cfg, "data", "dim"), _need(cfg, "data", "sigma"), seed=d.get("seed", 0))
        if part == "all" or not d.get("query_per_class"):
            if part == "query":
                raise ConfigError("[data] query_per_class must be set to encode a query part")
            return ds
        train_set, query = ds.split(d["query_per_class"], seed=d.get("split_seed", 0))
        return train_set if part == "train" else query
    if kind == "idx":
        train_set = data_io.load_idx(_need(cfg, "data", "images"), _need(cfg, "data", "labels"), d.get("limit"))
        if part == "train":
            return train_set
        if "query_images" not in d:
            raise ConfigError("missing required key [data] query_images")
        query = data_io.load_idx(d["query_images"], _need(cfg, "data", "query_labels"))
        # keep ids unique across the two files
        query = data_io.Dataset(query.x, query.labels, query.ids + len(train_set))
        return query if part == "query" else _concat(train_set, query)
    if kind == "csv":
        train_set = data_io.load_vector_csv(_need(cfg, "data", "path"), d.get("header", False))
        if part == "train":
            return train_set
        query = data_io.load_vector_csv(_need(cfg, "data", "query_path"), d.get("header", False))
        return query if part == "query" else _concat(train_set, query)
    raise ConfigError(f"[data] kind: unknown dataset kind {kind!r}; choose synthetic, idx or csv")


def _concat(a, b):
    return data_io.Dataset(np.concatenate([a.x, b.x]), np.concatenate([a.labels, b.labels]),
                           np.concatenate([a.ids, b.ids]))


def train_config(cfg):
    kwargs = dict(cfg.get("train", {}))
    model = cfg.get("model", {})
    for key in ("preset", "code_length", "width"):
        if key in model:
            kwargs[key] = model[key]
    if "checkpoint" in cfg.get("output", {}):
        kwargs["checkpoint_path"] = str(cfg["output"]["checkpoint"])
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- label sidecars -------------------------------------------------------------

def labels_path_for(db_path):
    return Path(str(db_path) + ".labels.csv")


def write_labels(path, ids, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"])
        for i, lab in zip(ids, labels):
            text = "|".join(sorted(map(str, lab))) if isinstance(lab, frozenset) else str(lab)
            w.writerow([int(i), text])


def read_labels(path):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"labels file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"id", "label"}:
        raise DataError(f"{path}: expected columns id,label")
    try:
        return {int(r["id"]): r["label"] for r in rows}
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def build_judge(label_maps, mode):
    merged = {}
    for m in label_maps:
        for i, lab in m.items():
            if merged.setdefault(i, lab) != lab:
                raise DataError(f"item id {i} has conflicting labels {merged[i]!r} and {lab!r}")
    ids = sorted(merged)
    if mode == "class":
        if any("|" in merged[i] for i in ids):
            raise DataError("judge mode 'class' needs one label per item, found tag sets; use --judge shared-tag")
        return RelevanceJudge(ids, [merged[i] for i in ids], "class")
    return RelevanceJudge(ids, [frozenset(merged[i].split("|")) for i in ids], "shared-tag")


# -- commands -------------------------------------------------------------------

def cmd_train(args):
    overrides = list(args.set or [])
    for flag, key in (("iterations", "train.iterations"), ("seed", "train.seed"), ("lr", "train.lr"),
                      ("lam", "train.lam"), ("code_length", "model.code_length"), ("preset", "model.preset"),
                      ("checkpoint", "output.checkpoint"), ("history", "output.history")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append((key, str(value)))
    cfg = read_config(args.config, overrides)
    checkpoint = _need(cfg, "output", "checkpoint")
    history_path = cfg["output"].get("history", Path(checkpoint).parent / "history.csv")
    cfg["output"]["history"] = history_path
    validate_paths(cfg)
    tc = train_config(cfg)
    dataset = load_dataset(cfg, "train")
    log.info("training %s q=%d on %d items for %d iterations", tc.preset, tc.code_length, len(dataset), tc.iterations)
    model, history = train(tc, dataset)
    save_checkpoint(model, checkpoint)
    history.to_csv(history_path)
    last = history.records[-1]
    print(f"trained {tc.iterations} iterations; final loss {last.loss:.6g}; "
          f"checkpoint {checkpoint}; history {history_path}")
    return EXIT_OK


def _encode_source(args):
    if args.csv:
        return data_io.load_vector_csv(args.csv, args.csv_header)
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise UsageError("--images and --labels must be given together")
        return data_io.load_idx(args.images, args.labels, args.limit)
    if args.config:
        cfg = read_config(args.config)
        validate_paths(cfg, outputs=False)
        return load_dataset(cfg, args.part)
    raise UsageError("give a dataset: --config, --csv or --images/--labels")


def _check_out(path):
    if not Path(path).parent.is_dir():
        raise DataError(f"output directory does not exist: {Path(path).parent}")


def cmd_encode(args):
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    _check_out(args.out)
    model = load_checkpoint(args.checkpoint)
    dataset = _encode_source(args)
    if tuple(dataset.item_shape) != tuple(model.input_shape):
        raise ShapeError(f"checkpoint expects items of shape {tuple(model.input_shape)}, "
                         f"dataset has {tuple(dataset.item_shape)}")
    db = CodeDatabase.build(model.bit_weights, encode(model, dataset.x), dataset.ids)
    save_db(db, args.out)
    labels_out = args.labels_out or labels_path_for(args.out)
    write_labels(labels_out, dataset.ids, dataset.labels)
    print(f"encoded {db.n} items at q={db.q} into {args.out}; labels in {labels_out}")
    return EXIT_OK


def _load_db(path):
    if not Path(path).is_file():
        raise DataError(f"code database not found: {path}")
    return load_db(path)


def _queries(args, db):
    qdb = _load_db(args.queries) if args.queries else db
    if qdb.q != db.q:
        raise DataError(f"query codes have q={qdb.q}, database has q={db.q}")
    return qdb


def cmd_query(args):
    db = _load_db(args.db)
    qdb = _queries(args, db)
    bits = args.bits or db.q
    if not 1 <= bits <= db.q:
        raise DataError(f"--bits {bits} exceeds the code length q={db.q}")
    if args.out:
        _check_out(args.out)
    search = query_lut if args.engine == "lut" else query_bruteforce
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["query_id", "rank", "item_id", "affinity"])
        for qid, code in zip(qdb.ids, qdb.natural_codes()):
            ranking = search(db, code, k_bits=bits, top_k=args.top)
            for rank, (item, aff) in enumerate(zip(ranking.ids, ranking.affinity), start=1):
                w.writerow([int(qid), rank, int(item), repr(float(aff))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _parse_sweep(text):
    try:
        bits = [int(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise UsageError(f"--bits-sweep expects comma-separated integers, got {text!r}") from None
    if not bits:
        raise UsageError("--bits-sweep is empty")
    return bits


def cmd_eval(args):
    db = _load_db(args.db)
    qdb = _queries(args, db)
    label_maps = [read_labels(args.db_labels or labels_path_for(args.db))]
    if args.queries:
        label_maps.append(read_labels(args.query_labels or labels_path_for(args.queries)))
    judge = build_judge(label_maps, args.judge)
    if args.bits and args.bits_sweep:
        raise UsageError("use either --bits or --bits-sweep")
    lengths = _parse_sweep(args.bits_sweep) if args.bits_sweep else [args.bits or db.q]
    for b in lengths:
        if not 1 <= b <= db.q:
            raise DataError(f"bit length {b} outside [1, {db.q}]")
    for p in (args.out, args.jsonl, args.curve):
        if p:
            _check_out(p)
    codes = qdb.natural_codes()
    reports = [
        evaluate(codes, qdb.ids, db, judge, k_bits=b, cutoff=args.cutoff, leave_one_out=args.leave_one_out,
                 engine=args.engine, with_cmc=args.cmc)
        for b in lengths
    ]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["bits", "n_queries", "map", "precision_at_500", "ham2"])
    for r in reports:
        w.writerow([r.bits, r.n_queries, f"{r.map:.6f}", f"{r.precision_at_500:.6f}", f"{r.ham2_precision:.6f}"])
    if args.out:
        write_reports_csv(reports, args.out)
    if args.jsonl:
        write_reports_jsonl(reports, args.jsonl)
    if args.curve:
        write_precision_curve(reports[-1], args.curve)
    return EXIT_OK


def cmd_truncate(args):
    db = _load_db(args.db)
    _check_out(args.out)
    small = db.truncate(args.bits)
    save_db(small, args.out)
    src = labels_path_for(args.db)
    if src.is_file():
        labels_path_for(args.out).write_bytes(src.read_bytes())
    print(f"kept the {args.bits} highest-weight of {db.q} bits; wrote {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _override(text):
    key, sep, value = text.partition("=")
    if not sep or "." not in key:
        raise argparse.ArgumentTypeError(f"expected SECTION.KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser():
    p = _Parser(prog="bsdh", description="Train weighted bit-scalable hash codes and search them.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model from a config file",
                       description="Train a hashing network; writes a checkpoint and history.csv.")
    t.add_argument("--config", required=True, help="INI run file with [data] [model] [train] [output] sections")
    t.add_argument("--iterations", type=int, help="override [train] iterations")
    t.add_argument("--seed", type=int, help="override [train] seed")
    t.add_argument("--lr", type=float, help="override [train] lr")
    t.add_argument("--lam", type=float, help="override [train] lam (regularizer weight)")
    t.add_argument("--code-length", dest="code_length", type=int, help="override [model] code_length")
    t.add_argument("--preset", choices=["paper", "desk", "mlp"], help="override [model] preset")
    t.add_argument("--checkpoint", help="override [output] checkpoint path")
    t.add_argument("--history", help="override [output] history CSV path (default: history.csv next to the checkpoint)")
    t.add_argument("--set", action="append", type=_override, metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="encode a dataset into a code database",
                       description="Encode items with a trained checkpoint into a BSDH-CDB file "
                                   "plus an id,label CSV sidecar.")
    e.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    e.add_argument("--out", required=True, help="output code database path")
    e.add_argument("--labels-out", help="labels sidecar path (default: OUT.labels.csv)")
    e.add_argument("--config", help="take the dataset from this run file's [data] section")
    e.add_argument("--part", choices=["train", "query", "all"], default="train",
                   help="which part of the configured dataset to encode (default: train)")
    e.add_argument("--csv", help="labeled-vector CSV (id,label,v1,...) to encode instead")
    e.add_argument("--csv-header", action="store_true", help="the CSV has a header line")
    e.add_argument("--images", help="IDX image file to encode instead")
    e.add_argument("--labels", help="IDX label file matching --images")
    e.add_argument("--limit", type=int, help="encode only the first N IDX items")
    e.set_defaults(func=cmd_encode)

    q = sub.add_parser("query", help="rank a database for each query code",
                       description="Write query_id,rank,item_id,affinity rows, most similar first.")
    q.add_argument("--db", required=True, help="code database to search")
    q.add_argument("--queries", help="code database holding the query codes (default: --db itself)")
    q.add_argument("--bits", type=int, help="search with the K highest-weight bits (default: q)")
    q.add_argument("--top", type=int, help="keep the N best matches per query (default: all)")
    q.add_argument("--engine", choices=["lut", "bruteforce"], default="lut",
                   help="lookup-table search or direct evaluation (default: lut)")
    q.add_argument("--out", help="output CSV path (default: stdout)")
    q.set_defaults(func=cmd_query)

    v = sub.add_parser("eval", help="retrieval metrics for a database",
                       description="MAP, precision@500 and HAM2 per bit length, printed as CSV.")
    v.add_argument("--db", required=True, help="code database to search")
    v.add_argument("--queries", help="code database holding the queries (default: --db itself)")
    v.add_argument("--db-labels", help="labels sidecar for --db (default: DB.labels.csv)")
    v.add_argument("--query-labels", help="labels sidecar for --queries (default: QUERIES.labels.csv)")
    v.add_argument("--judge", choices=["class", "shared-tag"], default="class",
                   help="relevance: equal labels, or at least one shared tag (default: class)")
    v.add_argument("--bits", type=int, help="evaluate one bit length (default: q)")
    v.add_argument("--bits-sweep", help="comma-separated bit lengths, e.g. 8,16,24,32,48,64")
    v.add_argument("--leave-one-out", action="store_true", help="drop each query's own id from its candidates")
    v.add_argument("--cutoff", type=int, help="sum AP only over the top N ranks")
    v.add_argument("--engine", choices=["lut", "bruteforce"], default="lut", help="search engine (default: lut)")
    v.add_argument("--cmc", action="store_true", help="also compute the CMC curve (JSON-lines output)")
    v.add_argument("--out", help="write the report table as CSV")
    v.add_argument("--jsonl", help="write full reports as JSON lines")
    v.add_argument("--curve", help="write the precision@k curve of the last bit length as k,precision CSV")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("truncate", help="keep the K highest-weight bits of a database",
                       description="Write a shorter code database; the labels sidecar is copied along.")
    r.add_argument("--db", required=True, help="input code database")
    r.add_argument("--bits", required=True, type=int, help="number of bits to keep")
    r.add_argument("--out", required=True, help="output code database")
    r.set_defaults(func=cmd_truncate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(exc, EXIT_USAGE)
    except (DataError, FormatError, ShapeError, StateError, OSError) as exc:
        return _fail(exc, EXIT_DATA)
    except NumericError as exc:
        return _fail(exc, EXIT_NUMERIC)


def _fail(exc, code):
    print(f"error: {exc}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
