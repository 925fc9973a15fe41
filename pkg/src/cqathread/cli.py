"""Command-line pipeline: ingest, train, decode, tune, evaluate.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .corpus import UNKNOWN, LabelMapping, dataset_stats, load_dataset, serialize_jsonl
from .evaluation import default_lambda_grid, dumps_json, lambda_curve, score, significance_report
from .exceptions import CQAThreadError
from .features import FeatureConfig
from .inference import DECODERS, read_scores_jsonl, write_scores_jsonl
from .maxent import THREE_CLASS, TWO_CLASS
from .pipeline import ThreadLabeler
from .textsim import load_annotations

log = logging.getLogger("cqathread")

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "lambda": 0.95,
    "decoder": "cut",
    "pairwise_mode": TWO_CLASS,
    "epsilon": 1e-6,
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw)


def _setting(args, config: dict, key: str):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, DEFAULTS[key])


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="TOML or JSON settings file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--jobs", type=int, default=default, help="worker processes")
    parser.add_argument("--lambda", dest="lambda", type=float, default=default,
                        help="mixing weight of the local term, in [0, 1]")
    parser.add_argument("--decoder", choices=DECODERS, default=default)
    parser.add_argument("--pairwise-mode", dest="pairwise_mode",
                        choices=(TWO_CLASS, THREE_CLASS), default=default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqathread", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = add("ingest", "convert a dataset to canonical JSONL and report statistics")
    p.add_argument("input")
    p.add_argument("--format", required=True, choices=("semeval-xml", "jsonl"))
    p.add_argument("--mapping", default="default",
                   help="'default' or a file of raw=target lines")
    p.add_argument("--map", action="append", default=[], metavar="RAW=TARGET",
                   help="override one label mapping entry (repeatable)")
    p.add_argument("--split", default="train", choices=("train", "dev", "test", "unlabeled"))
    p.add_argument("--strip-signature", action="append", default=[], metavar="REGEX")
    p.add_argument("-o", "--output", required=True)

    p = add("train", "train the local and pairwise classifiers")
    p.add_argument("--train", required=True, help="canonical JSONL training set")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--annotations", help="token/lemma/POS sidecar JSONL")
    p.add_argument("--local-sigma", type=float)
    p.add_argument("--pairwise-sigma", type=float)
    p.add_argument("--max-iter", type=int)

    p = add("decode", "label every comment of a dataset")
    p.add_argument("--data", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model-dir")
    src.add_argument("--scores", help="precomputed scores JSONL")
    p.add_argument("--annotations")
    p.add_argument("--scores-out", help="also write the thread scores")
    p.add_argument("-o", "--output", required=True)

    p = add("tune", "pick lambda by dev accuracy")
    p.add_argument("--data", required=True, help="labeled dev set (canonical JSONL)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model-dir")
    src.add_argument("--scores")
    p.add_argument("--annotations")
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("-o", "--output", required=True)

    p = add("evaluate", "score predictions against gold labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True, help="labeled canonical JSONL")
    p.add_argument("--compare", help="second predictions file for a significance test")
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("-o", "--output")
    return parser


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _read_annotations(path):
    return load_annotations(Path(path).read_bytes()) if path else None


def _labeler_from_config(args, config) -> ThreadLabeler:
    local = config.get("local", {})
    pairwise = config.get("pairwise", {})
    feats = config.get("features")
    return ThreadLabeler(
        decoder=_setting(args, config, "decoder"),
        lam=_setting(args, config, "lambda"),
        pairwise_mode=_setting(args, config, "pairwise_mode"),
        local_sigma=getattr(args, "local_sigma", None) or local.get("sigma", 1.0),
        pairwise_sigma=getattr(args, "pairwise_sigma", None) or pairwise.get("sigma", 1.0),
        max_iter=getattr(args, "max_iter", None) or local.get("max_iter", 1000),
        tol=local.get("tol", 1e-5),
        feature_config=FeatureConfig.from_dict(feats) if feats else None,
        epsilon=_setting(args, config, "epsilon"),
        seed=_setting(args, config, "seed"),
        n_jobs=_setting(args, config, "jobs"),
    )


def _override(model: ThreadLabeler, args, config) -> ThreadLabeler:
    """Apply decode-time flags (decoder, lambda, jobs) to a loaded model."""
    updates = {}
    for key, param in (("decoder", "decoder"), ("lambda", "lam"), ("jobs", "n_jobs")):
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key)
        if value is not None:
            updates[param] = value
    return model.set_params(**updates)


def cmd_ingest(args, config):
    if args.mapping == "default":
        mapping = LabelMapping.default()
    else:
        mapping = LabelMapping.parse(Path(args.mapping).read_text(encoding="utf-8"))
    if args.map:
        mapping = LabelMapping.parse("\n".join(args.map), base=mapping)
    ds = load_dataset(args.input, args.format, mapping, args.split, args.strip_signature)
    out = _ensure_parent(args.output)
    out.write_bytes(serialize_jsonl(ds))
    stats = dataset_stats(ds)
    doc = {"split": ds.split, **stats.as_dict()}
    Path(f"{out}.stats.json").write_text(dumps_json(doc), encoding="utf-8")
    print(f"questions\t{stats.question_count}")
    print(f"comments\t{stats.comment_count}")
    for label, n in stats.label_counts.items():
        print(f"{label}\t{n}")


def cmd_train(args, config):
    ds = load_dataset(args.train, "jsonl", split="train")
    model = _labeler_from_config(args, config)
    model.fit(ds, annotations=_read_annotations(args.annotations))
    model.save(args.model_dir)
    Path(args.model_dir, "train_log.json").write_text(dumps_json(model.training_log_), encoding="utf-8")
    log.info("trained on %d threads, %d pairs", model.training_log_["threads"], model.training_log_["pairs"])


def _scores_for(args, config, ds):
    if args.scores:
        eps = _setting(args, config, "epsilon")
        scores = read_scores_jsonl(Path(args.scores).read_bytes(), eps)
        by_id = {s.question_id: s for s in scores}
        missing = [t.question_id for t in ds if t.question_id not in by_id]
        if missing:
            raise CQAThreadError(f"no scores for questions: {', '.join(missing)}")
        return [by_id[t.question_id] for t in ds], None
    model = ThreadLabeler.load(args.model_dir)
    model = _override(model, args, config)
    return model.thread_scores(ds, _read_annotations(args.annotations)), model


def cmd_decode(args, config):
    ds = load_dataset(args.data, "jsonl")
    scores, model = _scores_for(args, config, ds)
    if model is None:
        model = ThreadLabeler(
            decoder=_setting(args, config, "decoder"),
            lam=_setting(args, config, "lambda"),
            epsilon=_setting(args, config, "epsilon"),
            n_jobs=_setting(args, config, "jobs"),
        )
    for thread, sc in zip(ds, scores):
        if sc.n != len(thread.comments):
            raise CQAThreadError(
                f"thread {thread.question_id!r}: {sc.n} scores for {len(thread.comments)} comments"
            )
    labels = model.decode_scores(scores)
    lines = []
    for thread, sc, thread_labels in zip(ds, scores, labels):
        for comment, label, s_good in zip(thread.comments, thread_labels, sc.good):
            lines.append(json.dumps({
                "question_id": thread.question_id,
                "comment_id": comment.comment_id,
                "label": label,
                "s_G": float(s_good),
            }))
    _ensure_parent(args.output).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    if args.scores_out:
        _ensure_parent(args.scores_out).write_bytes(write_scores_jsonl(scores))


def cmd_tune(args, config):
    ds = load_dataset(args.data, "jsonl")
    scores, model = _scores_for(args, config, ds)
    decoder = _setting(args, config, "decoder")
    gold = [t.gold_labels for t in ds]
    if any(lab == UNKNOWN for labels in gold for lab in labels):
        raise CQAThreadError("tuning needs a labeled dev set")
    grid = args.grid or config.get("lambda_grid") or default_lambda_grid()
    curve = lambda_curve(scores, gold, decoder, grid, _setting(args, config, "epsilon"))
    best = max(curve, key=lambda point: (point[1], point[0]))
    doc = {"decoder": decoder, "best_lambda": best[0], "best_accuracy": best[1],
           "curve": [{"lambda": lam, "accuracy": acc} for lam, acc in curve]}
    _ensure_parent(args.output).write_text(dumps_json(doc), encoding="utf-8")
    print(f"best_lambda\t{best[0]}")
    print(f"accuracy\t{best[1]:.4f}")


def _read_predictions(path) -> dict[tuple[str, str], str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out[(rec["question_id"], rec["comment_id"])] = rec["label"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise CQAThreadError(f"{path}: bad prediction record at line {lineno}: {exc}") from None
    return out


def _aligned(pred: dict, keys: list, path) -> list[str]:
    missing = [f"{q}/{c}" for q, c in keys if (q, c) not in pred]
    if missing:
        raise CQAThreadError(f"{path}: missing predictions for ids: {', '.join(missing)}")
    extra = set(pred) - set(keys)
    if extra:
        raise CQAThreadError(
            f"{path}: predictions for unknown ids: {', '.join(f'{q}/{c}' for q, c in sorted(extra))}"
        )
    return [pred[k] for k in keys]


def cmd_evaluate(args, config):
    ds = load_dataset(args.gold, "jsonl")
    keys = [(t.question_id, c.comment_id) for t in ds for c in t.comments]
    gold = [c.gold_label for t in ds for c in t.comments]
    pred = _aligned(_read_predictions(args.predictions), keys, args.predictions)
    report = score(pred, gold)
    doc = {"metrics": report.as_dict()}
    sys.stdout.write(report.to_tsv())
    print("system\tP\tR\tF1\tAcc")
    print(report.table_row(Path(args.predictions).stem))
    if args.compare:
        other = _aligned(_read_predictions(args.compare), keys, args.compare)
        sig = significance_report(pred, other, gold, args.iterations, _setting(args, config, "seed"))
        doc["significance"] = sig
        print(f"delta_accuracy\t{sig['delta_accuracy']:.4f}")
        print(f"p_value\t{sig['p_value']:.4g}")
    if args.output:
        _ensure_parent(args.output).write_text(dumps_json(doc), encoding="utf-8")


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "decode": cmd_decode,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config(getattr(args, "config", None))
        COMMANDS[args.command](args, config)
    except (CQAThreadError, OSError, ValueError) as exc:
        print(f"cqathread {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
