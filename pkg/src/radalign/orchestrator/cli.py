"""``radalign`` command line.

Exit codes: 0 success, 2 invalid configuration, 3 stage failure, 4 integrity failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..config import ConfigError, load_config
from .manifest import IntegrityError, verify_artifacts

log = logging.getLogger("radalign")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_INTEGRITY = 0, 2, 3, 4


def _config(args, **extra_overrides) -> dict:
    overrides = list(getattr(args, "set", None) or [])
    cfg = load_config(getattr(args, "config", None), overrides)
    out = getattr(args, "out", None)
    if out:
        cfg["output_root"] = str(out)
    for key, value in extra_overrides.items():
        section, name = key.split(".")
        cfg[section][name] = value
    return cfg


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# --- pipeline stages ------------------------------------------------------

def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config(args)
    records = run_pipeline(cfg, _csv_list(args.stages) if args.stages else None, force=args.force)
    for r in records:
        print(f"{r['stage']:<15} {r['status']:<8} {r['wall_clock_s']:8.1f}s")
    return EXIT_OK


def _single_stage(stage: str):
    def run(args) -> int:
        from .pipeline import run_pipeline

        extra = {}
        if getattr(args, "init", None):
            extra["align.init"] = args.init
        cfg = _config(args, **extra)
        for r in run_pipeline(cfg, [stage], force=args.force):
            print(f"{r['stage']} {r['status']} -> {cfg['output_root']}")
        return EXIT_OK

    return run


# --- label tools ----------------------------------------------------------

def cmd_extract_labels(args) -> int:
    from ..data.io import manifest_reports, read_manifest
    from ..labels import default_template, extract_corpus, make_backend, summarize_results, write_results
    from .pipeline import vocabulary_entries

    cfg = _config(args)
    specs = {b.get("name"): b for b in cfg["extract"]["backends"]}
    spec = dict(specs.get(args.backend) or {"name": args.backend, "kind": "mock" if args.backend.startswith("mock") else "openai"})
    vocab = vocabulary_entries(cfg)
    ext = cfg["extract"]
    defaults = {k: ext[k] for k in ("max_concurrency", "retry_budget", "timeout_s")}
    backend = make_backend(spec, [e["name"] for e in vocab], defaults)
    results = extract_corpus(backend, default_template(vocab), manifest_reports(read_manifest(args.manifest)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_results(out / "results.jsonl", results)
    summary = {**summarize_results(results), "requests": backend.requests, "max_in_flight": backend.max_in_flight}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _dump(summary)
    return EXIT_OK


def cmd_merge_labels(args) -> int:
    from ..data.io import write_labels_csv
    from ..labels import merge_labels, read_results

    per_backend = []
    for d in args.inputs:
        p = Path(d)
        per_backend.append(read_results(p / "results.jsonl" if p.is_dir() else p))
    merged = merge_labels(per_backend)
    if not merged.ids:
        raise ValueError("no report was parsed by any backend")
    write_labels_csv(args.out, merged.ids, merged.labels)
    _dump({"n_merged": len(merged.ids), "dropped": merged.dropped})
    return EXIT_OK


def cmd_score_labels(args) -> int:
    from ..data.io import read_labels_csv
    from ..labels import evaluate_label_quality

    cand_ids, cand = read_labels_csv(args.candidate)
    ref_ids, ref = read_labels_csv(args.reference)
    reference = dict(zip(ref_ids, ref))
    common = [i for i in cand_ids if i in reference]
    if not common:
        raise ValueError("candidate and reference share no ids")
    by_id = dict(zip(cand_ids, cand))
    report = evaluate_label_quality([by_id[i] for i in common], [reference[i] for i in common]).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _dump({k: v for k, v in report.items() if k != "per_class"})
    return EXIT_OK


# --- embedding and evaluation ---------------------------------------------

def _state_sets(state, manifest: str, labels: str | None, splits: list[str]):
    from .pipeline import volume_sets

    if labels is None:
        raise ValueError("--labels (reference CSV) is required")
    cfg = state.config
    return volume_sets(manifest, labels, splits, target_spacing_mm=cfg["target_spacing_mm"], pad_shape=cfg["pad_shape"])


def cmd_embed(args) -> int:
    from ..alignment.embeddings import embed_corpus, write_table
    from ..alignment.train import load_align_state
    from ..data.dataset import build_volume_set
    from ..data.io import manifest_reports, read_manifest, read_volume, resolve_volume_path

    state = load_align_state(args.state)
    entries = read_manifest(args.manifest)
    if args.split:
        entries = [e for e in entries if e["split"] == args.split]
    if not entries:
        raise ValueError("no manifest entries to embed")
    vols = [read_volume(resolve_volume_path(args.manifest, e["volume_path"]), e["id"]) for e in entries]
    vs = build_volume_set(vols, manifest_reports(entries), [], target_spacing_mm=state.config["target_spacing_mm"],
                          pad_shape=state.config["pad_shape"])
    images, reports = embed_corpus(state, vs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "image.emb", images)
    write_table(out / "text.emb", reports)
    print(f"embedded {len(vs)} pairs -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from ..alignment.train import load_align_state
    from ..evaluation.evaluate import evaluate_state, write_per_class_csv
    from .pipeline import write_report

    state = load_align_state(args.state)
    settings = dict(_config(args)["evaluate"]) if args.config else {}
    if args.tasks:
        settings["tasks"] = _csv_list(args.tasks)
    splits = _csv_list(args.splits)
    sets = _state_sets(state, args.manifest, args.labels, splits)
    if not sets:
        raise ValueError(f"manifest has no volumes in splits {splits}")
    report = evaluate_state(state, sets, settings)
    out = Path(args.out)
    write_report(out, report)
    write_per_class_csv(out.with_name(out.stem + "_per_class.csv"), report)
    _dump({k: v for k, v in report.items() if k != "per_class"})
    return EXIT_OK


# --- experiments ----------------------------------------------------------

def cmd_compare_curves(args) -> int:
    from .curves import compare_loss_curves

    labels = tuple(_csv_list(args.labels))
    if len(labels) != 2:
        raise ConfigError("--labels takes exactly two names")
    _dump(compare_loss_curves(args.a, args.b, args.out, labels))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import sweep_data_fractions

    cfg = _config(args)
    fractions = [float(f) for f in _csv_list(args.fractions)]
    _dump(sweep_data_fractions(cfg, fractions, cfg["output_root"], args.metric, force=args.force))
    return EXIT_OK


def cmd_scaling_law(args) -> int:
    from .sweep import collect_points, fit_and_plot

    points = collect_points(args.runs, args.metric)
    out = Path(args.out)
    result = fit_and_plot(points, out.parent, args.metric)
    if out.name != "fit.json":
        out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _dump(result)
    return EXIT_OK if "error" not in result else EXIT_STAGE


def cmd_verify(args) -> int:
    problems = verify_artifacts(args.root)
    if problems:
        raise IntegrityError("; ".join(problems))
    print(f"all recorded artifacts under {args.root} match their digests")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radalign", description="Supervised pre-training and image-report alignment for CT.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, out_help="experiment root (overrides output_root)"):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, value parsed as JSON")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--force", action="store_true", help="rerun even if up to date")
        return sp

    sp = with_config(sub.add_parser("run", help="run pipeline stages in order"))
    sp.add_argument("--stages", help="comma-separated subset; default all")
    sp.set_defaults(func=cmd_run)

    for stage in ("generate-data", "pretrain"):
        sp = with_config(sub.add_parser(stage, help=f"run the {stage} stage"))
        sp.set_defaults(func=_single_stage(stage))
    sp = with_config(sub.add_parser("align", help="run the alignment stage"))
    sp.add_argument("--init", help="random | supervised | supervised:PATH | external:PATH")
    sp.set_defaults(func=_single_stage("align"))

    sp = sub.add_parser("extract-labels", help="query one backend for every report in a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--backend", required=True, help="backend name from the config, or 'mock'")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_extract_labels)

    sp = sub.add_parser("merge-labels", help="average several backends into soft labels")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True, help="extraction directories or JSONL files")
    sp.add_argument("--out", required=True, help="labels CSV")
    sp.set_defaults(func=cmd_merge_labels)

    sp = sub.add_parser("score-labels", help="compare candidate labels with reference labels")
    sp.add_argument("--candidate", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_score_labels)

    sp = sub.add_parser("embed", help="write image and report embedding tables")
    sp.add_argument("--state", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("evaluate", help="zero-shot and retrieval metrics for an alignment checkpoint")
    sp.add_argument("--state", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--labels", required=True, help="reference labels CSV")
    sp.add_argument("--tasks", default="zeroshot,retrieval")
    sp.add_argument("--splits", default="validation,external")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out", required=True, help="report.json path")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare-curves", help="overlay two alignment loss traces")
    sp.add_argument("--a", required=True, help="run directory or loss CSV")
    sp.add_argument("--b", required=True)
    sp.add_argument("--labels", default="a,b")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_compare_curves)

    sp = with_config(sub.add_parser("sweep", help="train on nested fractions of the data and fit a power law"))
    sp.add_argument("--fractions", default="0.25,0.5,1.0")
    sp.add_argument("--metric", default="validation.zeroshot.auc")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("scaling-law", help="fit a power law to finished runs")
    sp.add_argument("--runs", required=True, help="directory whose subdirectories hold report.json")
    sp.add_argument("--metric", default="auc")
    sp.add_argument("--out", required=True, help="fit.json path")
    sp.set_defaults(func=cmd_scaling_law)

    sp = sub.add_parser("verify-artifacts", help="check recorded digests of an experiment root")
    sp.add_argument("--root", required=True)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
