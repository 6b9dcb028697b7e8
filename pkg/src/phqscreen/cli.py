"""Command-line entry point.

Exit codes: 0 success (NA-bearing runs included), 2 input error, 3 backend error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml

from phqscreen import knowledge, metrics, orchestrator, transcripts
from phqscreen.backend import BackendSpec, make_backend
from phqscreen.errors import BackendConfigError, InputError

log = logging.getLogger("phqscreen")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND = 0, 2, 3

# Fallbacks for options that a config file may also set.
DEFAULTS: dict[str, Any] = {
    "preset": "no-background",
    "batch_size": 1,
    "threshold": 5,
    "thresholds": "3,4,5,6,7",
    "out_dir": "runs",
    "bin_width": 500,
    "tokenizer": "approx",
    "repair_retries": 1,
    "doc": [],
    "split": [],
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise CliError(f"missing required {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}")
    return p


def _pairs(items: list[str] | dict[str, str], what: str) -> dict[str, str]:
    if isinstance(items, dict):
        return {str(k): str(v) for k, v in items.items()}
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--{what} expects KEY=PATH, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _labels(path: str | None) -> dict[int, transcripts.LabelRecord]:
    p = _require_file(path, "labels file")
    return dict(transcripts.labels_by_id(transcripts.load_labels(p.read_bytes())))


def _dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _table(header: list[str], rows: list[list[Any]]) -> str:
    cols = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cols) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cols]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- ingest -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    tdir = _require_file(args.transcripts, "transcripts directory")
    labels = transcripts.load_labels(_require_file(args.labels, "labels file").read_bytes())
    splits = []
    for name, path in _pairs(args.split, "split").items():
        splits.append(transcripts.load_split(name, _require_file(path, f"{name} split").read_bytes()))
    transcripts.validate_splits(splits)

    dialogues = [transcripts.extract_participant_text(t)
                 for t in transcripts.load_transcript_dir(tdir)]
    label_ids = {r.participant_id for r in labels}
    unlabeled = [d.participant_id for d in dialogues if d.participant_id not in label_ids]
    if unlabeled:
        log.warning("transcripts without labels: %s", unlabeled)

    out = Path(args.out or "dialogues.csv")
    transcripts.write_dialogues(dialogues, out)

    columns = [("Overall", transcripts.summarize_cohort(labels))]
    columns += [(s.name, transcripts.summarize_cohort(labels, s)) for s in splits]
    row_names = list(columns[0][1].row())
    rows = [[name] + [summary.row()[name] for _, summary in columns] for name in row_names]
    print(_table([""] + [c for c, _ in columns], rows))
    print(f"\nwrote {len(dialogues)} joint dialogues to {out}")
    return EXIT_OK


# -- assess -----------------------------------------------------------------

def _load_dialogues(args) -> list[transcripts.JointDialogue]:
    if args.dialogues:
        dialogues = transcripts.read_dialogues(_require_file(args.dialogues, "dialogues file"))
    elif args.transcripts:
        dialogues = [transcripts.extract_participant_text(t)
                     for t in transcripts.load_transcript_dir(args.transcripts)]
    else:
        raise CliError("assess needs --dialogues or --transcripts")
    if args.ids:
        ids = args.ids if isinstance(args.ids, list) else str(args.ids).split(",")
        wanted = [int(x) for x in ids if str(x).strip()]
        by_id = {d.participant_id: d for d in dialogues}
        missing = [i for i in wanted if i not in by_id]
        if missing:
            raise CliError(f"participants not found: {missing}")
        dialogues = [by_id[i] for i in wanted]
    if args.split_file:
        split = transcripts.load_split("test", _require_file(args.split_file, "split file").read_bytes())
        dialogues = [d for d in dialogues if d.participant_id in split.participant_ids]
    return dialogues


def cmd_assess(args) -> int:
    task = int(args.task)
    cfg = knowledge.load_config(args.preset, _pairs(args.doc, "doc"))
    bundle = (knowledge.PromptBundle.from_dir(args.templates) if args.templates
              else knowledge.PromptBundle.default())
    dialogues = _load_dialogues(args)

    spec_path = _require_file(args.backend, "backend spec")
    try:
        spec = BackendSpec.from_file(spec_path)
    except BackendConfigError as exc:
        raise CliError(str(exc), EXIT_BACKEND) from exc
    cassette = args.cassette or spec.cassette_path
    if args.record and spec.kind == "replay":
        raise CliError("--record needs a live backend, not replay", EXIT_BACKEND)
    if args.record and not cassette:
        raise CliError("--record needs --cassette", EXIT_BACKEND)
    backend = make_backend(
        spec, cassette,
        record_to=cassette if args.record else None, overwrite=args.overwrite,
    )

    options = orchestrator.RunOptions(
        model_id=args.model or spec.model_id,
        temperature=spec.temperature if args.temperature is None else args.temperature,
        max_output_tokens=spec.max_output_tokens,
        repair_retries=int(args.repair_retries),
        max_in_flight=spec.max_in_flight,
        context_limit=spec.context_limit,
    )
    run_id = args.run_id or (
        f"task{task}-{args.preset}-{datetime.now(timezone.utc):%Y%m%dT%H%M%SZ}"
    )
    writer = orchestrator.RunWriter(Path(args.out_dir) / run_id)
    try:
        if task == 1:
            results, manifest = orchestrator.run_task1(
                backend, cfg, bundle, dialogues, int(args.batch_size),
                options=options, run_id=run_id, sink=writer.raw,
            )
            records = [orchestrator.task1_to_dict(a) for a in results]
        else:
            labels = _labels(args.labels)
            missing = [d.participant_id for d in dialogues if d.participant_id not in labels]
            if missing:
                raise CliError(f"no labels (external scores) for participants {missing}")
            scores = {pid: rec.phq8_total for pid, rec in labels.items()}
            results, manifest = orchestrator.run_task2_batch(
                backend, cfg, bundle, dialogues, scores,
                options=options, run_id=run_id, sink=writer.raw,
            )
            records = [s.to_dict() for s in results]
    finally:
        if args.record:
            backend.cassette.save()
        backend.close()
    manifest.cassette_path = str(cassette) if cassette else None
    writer.finish(manifest, records)
    print(f"run {run_id}: {manifest.n_participants} participants, {manifest.n_na} NA")
    print(f"wrote {writer.run_dir}")
    return EXIT_OK


# -- calibrate / evaluate / compare ------------------------------------------

def _load_run(run_dir: str, task: int | None = None):
    path = Path(run_dir)
    if not (path / "manifest.json").is_file() or not (path / "sessions.jsonl").is_file():
        raise CliError(f"not a run directory: {path}")
    manifest, sessions = orchestrator.load_run(path)
    if not sessions:
        raise CliError(f"run {path} has no sessions")
    if task is not None and manifest.get("task") != task:
        raise CliError(f"run {path} is a task {manifest.get('task')} run, expected task {task}")
    return manifest, sessions


def _likelihoods(sessions) -> dict[int, int | None]:
    return {s["participant_id"]: s["likelihood"] for s in sessions}


def _classification_dict(likelihoods, binary, threshold) -> dict:
    cm, excluded = metrics.confusion(metrics.binarize(likelihoods, threshold), binary)
    if cm.n == 0:
        return {"metrics": {c: None for c in metrics.ClassificationReport.COLUMNS},
                "raw": {c: None for c in metrics.ClassificationReport.COLUMNS},
                "n": 0, "n_excluded": excluded, "flags": ["no_non_na_predictions"]}
    rep = metrics.classification_report(cm, likelihoods, binary, n_excluded=excluded)
    out = rep.to_dict()
    out["confusion"] = {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn}
    return out


def cmd_calibrate(args) -> int:
    manifest, sessions = _load_run(args.run_dir, task=1)
    labels = _labels(args.labels)
    binary = {pid: r.phq8_binary for pid, r in labels.items()}
    thresholds = [int(t) for t in str(args.thresholds).split(",")]
    sweep = metrics.threshold_sweep(_likelihoods(sessions), binary, thresholds)
    report = {"run_id": manifest["run_id"], **sweep.to_dict()}
    _dump_json(report, Path(args.run_dir) / "calibration.json")
    rows = [[t, metrics.fmt3(a), sweep.positive_counts[t]] for t, a in sweep.accuracy.items()]
    print(_table(["threshold", "accuracy", "n_positive"], rows))
    print(f"best threshold: {sweep.best_threshold}")
    return EXIT_OK


def _regression_dict(preds, truths) -> dict:
    try:
        return metrics.regression_report(preds, truths).to_dict()
    except InputError as exc:
        n = sum(1 for p in preds.values() if p is not None)
        return {"metrics": None, "raw": None, "n": n, "n_excluded": len(preds) - n,
                "flags": [f"insufficient_data: {exc}"]}


def cmd_evaluate(args) -> int:
    manifest, sessions = _load_run(args.run_dir)
    labels = _labels(args.labels)
    report: dict[str, Any] = {"run_id": manifest["run_id"], "task": manifest["task"],
                              "config": manifest["config_name"], "model": manifest["model_id"]}
    if manifest["task"] == 1:
        binary = {pid: r.phq8_binary for pid, r in labels.items()}
        report["threshold"] = int(args.threshold)
        report["classification"] = _classification_dict(
            _likelihoods(sessions), binary, int(args.threshold))
        m = report["classification"]
        print(_table(["metric", "value"], [[k, v] for k, v in m["metrics"].items()]
                     + [["n", m["n"]], ["n_excluded", m["n_excluded"]]]))
    else:
        truths = {pid: r.phq8_total for pid, r in labels.items()}
        stages = {
            "stage1": {s["participant_id"]: s["stage1"]["total"] for s in sessions},
            "stage2": {s["participant_id"]: s["stage2"]["total"] for s in sessions},
            "stage3": {s["participant_id"]: s["stage3"]["estimate"] for s in sessions},
        }
        missing = sorted({pid for p in stages.values() for pid in p} - truths.keys())
        if missing:
            raise CliError(f"no labels for participants {missing}")
        report["regression"] = {k: _regression_dict(v, truths) for k, v in stages.items()}
        report["abs_difference_histogram"] = {
            k: metrics.abs_difference_histogram(v, truths, int(args.diff_bin_width))
            for k, v in stages.items()
        }
        report["abs_difference"] = {
            k: {str(pid): None if p is None else abs(p - truths[pid]) for pid, p in v.items()}
            for k, v in stages.items()
        }
        rows = []
        for k, r in report["regression"].items():
            vals = r["metrics"] or {"mae": "NA", "rmse": "NA", "r_squared": "NA"}
            rows.append([k, vals["mae"], vals["rmse"], vals["r_squared"], r["n"], r["n_excluded"]])
        print(_table(["stage", "MAE", "RMSE", "R^2", "n", "n_excluded"], rows))
    out = Path(args.out) if args.out else Path(args.run_dir) / "report.json"
    _dump_json(report, out)
    return EXIT_OK


COMPARE_COLUMNS = ["run_id", "config", "model", *metrics.ClassificationReport.COLUMNS,
                   "n", "n_excluded"]


def cmd_compare(args) -> int:
    labels = _labels(args.labels)
    binary = {pid: r.phq8_binary for pid, r in labels.items()}
    rows = []
    for run_dir in args.run_dirs:
        manifest, sessions = _load_run(run_dir, task=1)
        rep = _classification_dict(_likelihoods(sessions), binary, int(args.threshold))
        raw_f1 = rep["raw"]["f1"] if rep["raw"]["f1"] is not None else -1.0
        rows.append((raw_f1, manifest["run_id"], [
            manifest["run_id"], manifest["config_name"], manifest["model_id"],
            *[rep["metrics"][c] if rep["metrics"][c] is not None else "NA"
              for c in metrics.ClassificationReport.COLUMNS],
            rep["n"], rep["n_excluded"],
        ]))
    rows.sort(key=lambda r: (-r[0], r[1]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_COLUMNS)
    writer.writerows(r[2] for r in rows)
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_tokens(args) -> int:
    dialogues = transcripts.read_dialogues(_require_file(args.dialogues, "dialogues file"))
    tok = transcripts.resolve_tokenizer(args.tokenizer)
    counts = [tok(d.text) for d in dialogues]
    if args.histogram:
        hist = transcripts.histogram(counts, int(args.bin_width))
        print(_table(["bin_start", "count"], [[b, c] for b, c in hist]))
    else:
        print(_table(["participant_id", "tokens"],
                     [[d.participant_id, c] for d, c in zip(dialogues, counts)]))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    config_help = "YAML key-value file supplying option defaults"
    p = argparse.ArgumentParser(prog="phqscreen", description=__doc__.splitlines()[0])
    p.add_argument("--config", help=config_help)
    p.add_argument("-v", "--verbose", action="store_true")
    # Also accepted after the subcommand; SUPPRESS keeps it from clobbering the global value.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=config_help)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="build joint dialogues and print cohort statistics")
    s.add_argument("--transcripts", help="directory of <id>_TRANSCRIPT files")
    s.add_argument("--labels", help="label CSV")
    s.add_argument("--split", action="append", default=None, metavar="NAME=FILE",
                   help="split file (train/dev/test), repeatable")
    s.add_argument("--out", help="joint-dialogue CSV to write (default dialogues.csv)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("assess", parents=[common], help="run Task 1 or Task 2 against a backend")
    s.add_argument("--task", type=int, choices=(1, 2), required=True)
    s.add_argument("--preset", choices=list(knowledge.PRESETS))
    s.add_argument("--backend", help="backend spec file (YAML/JSON)")
    s.add_argument("--doc", action="append", default=None, metavar="KIND=PATH",
                   help=f"knowledge document; KIND in {[k.value for k in knowledge.DocKind]}")
    s.add_argument("--templates", help="directory overriding prompt templates")
    s.add_argument("--dialogues", help="joint-dialogue CSV from `ingest`")
    s.add_argument("--transcripts", help="transcript directory (alternative to --dialogues)")
    s.add_argument("--labels", help="label CSV (task 2 external scores)")
    s.add_argument("--ids", help="comma-separated participant ids to assess, in order")
    s.add_argument("--split-file", help="restrict to ids listed in this split file")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--cassette", help="cassette for replay or recording")
    s.add_argument("--record", action="store_true", help="record live responses to --cassette")
    s.add_argument("--overwrite", action="store_true", help="re-record existing fingerprints")
    s.add_argument("--model")
    s.add_argument("--temperature", type=float)
    s.add_argument("--repair-retries", type=int)
    s.add_argument("--out-dir")
    s.add_argument("--run-id")
    s.set_defaults(func=cmd_assess)

    s = sub.add_parser("calibrate", parents=[common], help="accuracy per likelihood threshold")
    s.add_argument("run_dir")
    s.add_argument("--labels")
    s.add_argument("--thresholds")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("evaluate", parents=[common], help="classification or regression report for a run")
    s.add_argument("run_dir")
    s.add_argument("--labels")
    s.add_argument("--threshold", type=int)
    s.add_argument("--diff-bin-width", type=int, default=1)
    s.add_argument("--out", help="report path (default <run_dir>/report.json)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="one CSV row per Task 1 run, sorted by F1")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("--labels")
    s.add_argument("--threshold", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("tokens", parents=[common], help="token counts of joint dialogues")
    s.add_argument("--dialogues")
    s.add_argument("--histogram", action="store_true")
    s.add_argument("--bin-width", type=int)
    s.add_argument("--tokenizer")
    s.set_defaults(func=cmd_tokens)
    return p


def _apply_defaults(args: argparse.Namespace) -> None:
    config: dict[str, Any] = {}
    if args.config:
        path = _require_file(args.config, "config file")
        try:
            config = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise CliError(f"bad config file {path}: {exc}") from exc
        if not isinstance(config, dict):
            raise CliError(f"config file {path} is not a key-value mapping")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    for key in vars(args):
        if getattr(args, key) is None:
            if key in config:
                setattr(args, key, config[key])
            elif key in DEFAULTS:
                setattr(args, key, DEFAULTS[key])


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_defaults(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BackendConfigError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
