"""Stage runner: data generation, label extraction and merging, pre-training, alignment, evaluation.

Every stage reads and writes fixed paths under the experiment root and logs one
record to ``run_manifest.jsonl``. A stage is skipped when its last record has
the same config hash, identical input digests and untouched outputs; once a
stage actually runs, every later stage of the same invocation runs as well.
"""

from __future__ import annotations

import json
import logging
import math
import shutil
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..alignment.train import align_train, load_align_state, save_align_state
from ..config import ConfigError, config_hash, load_vocabulary
from ..data.dataset import VolumeSet, build_volume_set, derive_seed
from ..data.io import (
    manifest_reports,
    read_labels_csv,
    read_manifest,
    read_volume,
    resolve_volume_path,
    write_labels_csv,
    write_manifest,
    write_volume,
)
from ..data.synthetic import class_regions, generate_synthetic_corpus, signature_masks, split_ids
from ..evaluation.evaluate import evaluate_state, write_per_class_csv
from ..labels.backends import make_backend
from ..labels.extract import extract_corpus, merge_labels, read_results, summarize_results, write_results
from ..labels.prompt import default_template
from ..labels.quality import evaluate_label_quality
from ..vision.train import save_state, supervised_train, write_trace
from .manifest import RunManifest

log = logging.getLogger(__name__)

STAGES = ("generate-data", "extract-labels", "merge-labels", "pretrain", "align", "evaluate")

MANIFEST = "data/manifest.jsonl"
VOLUMES = "data/volumes"
REFERENCE = "data/reference_labels.csv"
MERGED = "labels/merged.csv"
QUALITY = "labels/quality.json"
PRETRAIN_CKPT = "pretrain/state.ckpt"
PRETRAIN_TRACE = "pretrain/trace.csv"
ALIGN_CKPT = "align/state.ckpt"
ALIGN_LOSS = "align/loss.csv"
REPORT = "report.json"
PER_CLASS = "per_class.csv"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


class MissingInputError(StageError):
    pass


# --- config helpers -------------------------------------------------------

def vocabulary_entries(config: dict) -> list[dict[str, str]]:
    entries = load_vocabulary(config["data"].get("vocabulary_path"))
    n = config["data"]["n_classes"]
    if n > len(entries):
        raise ConfigError(f"data.n_classes={n} exceeds the {len(entries)}-entry vocabulary")
    return entries[:n]


def backend_names(config: dict) -> list[str]:
    names = [b.get("name", b.get("kind", "mock")) for b in config["extract"]["backends"]]
    if not names:
        raise ConfigError("extract.backends is empty")
    if len(set(names)) != len(names):
        raise ConfigError(f"backend names must be unique: {names}")
    return names


def results_path(name: str) -> str:
    return f"labels/{name}/results.jsonl"


def parse_init(init: str) -> tuple[str, str | None]:
    if init.startswith("external:"):
        return "external", init.split(":", 1)[1]
    if init.startswith("supervised:"):
        return "supervised", init.split(":", 1)[1]
    return init, None


def train_subset(ids: list[str], fraction: float, seed: int) -> list[str]:
    """First ``ceil(fraction * n)`` ids of a seeded permutation, so smaller fractions nest in larger ones."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    order = np.random.default_rng(derive_seed(seed, 4)).permutation(len(ids))
    keep = order[:max(1, math.ceil(fraction * len(ids) - 1e-9))]
    return sorted(ids[i] for i in keep)


# --- stage inputs and outputs --------------------------------------------

def _data_inputs(config: dict) -> list[str]:
    return [MANIFEST, VOLUMES] if config["data"]["source"] == "synthetic" else [MANIFEST]


def stage_io(stage: str, config: dict) -> tuple[list[str], list[str]]:
    if stage == "generate-data":
        src = config["data"]
        inputs = [] if src["source"] == "synthetic" else [str(Path(src["manifest"]).resolve()), str(Path(src["labels_csv"]).resolve())]
        return inputs, _data_inputs(config) + [REFERENCE]
    if stage == "extract-labels":
        outs = []
        for name in backend_names(config):
            outs += [results_path(name), f"labels/{name}/summary.json"]
        return [MANIFEST], outs
    if stage == "merge-labels":
        return [results_path(n) for n in backend_names(config)] + [REFERENCE], [MERGED, QUALITY]
    if stage == "pretrain":
        targets = MERGED if config["pretrain"]["label_source"] == "merged" else REFERENCE
        return _data_inputs(config) + sorted({targets, REFERENCE}), [PRETRAIN_CKPT, PRETRAIN_TRACE]
    if stage == "align":
        mode, path = parse_init(config["align"]["init"])
        extra = {"supervised": [path or PRETRAIN_CKPT], "external": [str(Path(path).resolve())] if path else []}.get(mode, [])
        return _data_inputs(config) + extra, [ALIGN_CKPT, ALIGN_LOSS]
    if stage == "evaluate":
        return _data_inputs(config) + [REFERENCE, ALIGN_CKPT], [REPORT, PER_CLASS]
    raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")


PRODUCERS = {MANIFEST: "generate-data", VOLUMES: "generate-data", REFERENCE: "generate-data",
             MERGED: "merge-labels", PRETRAIN_CKPT: "pretrain", ALIGN_CKPT: "align"}


def producer_of(rel: str) -> str:
    if rel.startswith("labels/") and rel.endswith("results.jsonl"):
        return "extract-labels"
    return PRODUCERS.get(rel, "an external supplier")


# --- corpus loading -------------------------------------------------------

def volume_sets(manifest_path: str | Path, reference_path: str | Path, splits, *, target_spacing_mm, pad_shape,
                targets_path: str | Path | None = None, masks: bool = False, fraction: float = 1.0,
                seed: int = 0) -> dict[str, VolumeSet]:
    """Preprocessed volume sets per split, with reference labels and optional training targets.

    The train split is first cut to ``fraction`` of its ids (nested across
    fractions); reports without a target row are then left out. Masks are the
    planted signature regions and exist only for synthetic volumes.
    """
    entries = read_manifest(manifest_path)
    ref_ids, ref_labels = read_labels_csv(reference_path)
    reference = dict(zip(ref_ids, ref_labels))
    vocab = list(ref_labels[0].vocabulary)
    target_map = None
    if targets_path is not None:
        ids, labs = read_labels_csv(targets_path)
        if labs and labs[0].vocabulary != vocab:
            raise ValueError(f"{targets_path} and {reference_path} disagree on the class list")
        target_map = dict(zip(ids, labs))
    out = {}
    for split in splits:
        chosen = [e for e in entries if e["split"] == split and e["id"] in reference]
        if split == "train" and fraction < 1.0:
            keep = set(train_subset([e["id"] for e in chosen], fraction, seed))
            chosen = [e for e in chosen if e["id"] in keep]
        if target_map is not None:
            dropped = [e["id"] for e in chosen if e["id"] not in target_map]
            if dropped:
                log.warning("%s: %d reports without training labels left out", split, len(dropped))
            chosen = [e for e in chosen if e["id"] in target_map]
        if not chosen:
            continue
        vols = [read_volume(resolve_volume_path(manifest_path, e["volume_path"]), e["id"]) for e in chosen]
        ref = [reference[e["id"]] for e in chosen]
        mask_list = None
        if masks:
            regions = class_regions(len(vocab), vols[0].shape)
            mask_list = [signature_masks(r.values, regions) for r in ref]
        out[split] = build_volume_set(
            vols, manifest_reports(chosen), vocab, target_spacing_mm=target_spacing_mm, pad_shape=pad_shape,
            targets=[target_map[e["id"]] for e in chosen] if target_map is not None else None,
            reference=ref, masks=mask_list,
        )
    return out


def load_sets(root: Path, config: dict, splits, *, targets: str | None = None, masks: bool = False,
              fraction: float = 1.0) -> dict[str, VolumeSet]:
    """:func:`volume_sets` over an experiment root. ``targets`` is "merged", "reference" or None."""
    data = config["data"]
    if masks and data["source"] != "synthetic":
        raise ValueError("auxiliary segmentation masks are only available for the synthetic corpus")
    vocab = [e["name"] for e in vocabulary_entries(config)]
    header = read_labels_csv(root / REFERENCE)[1][0].vocabulary
    if header != vocab:
        raise ConfigError(f"reference labels list {header}, config vocabulary is {vocab}")
    targets_path = {"merged": root / MERGED, "reference": root / REFERENCE}.get(targets) if targets else None
    return volume_sets(root / MANIFEST, root / REFERENCE, splits, target_spacing_mm=data["target_spacing_mm"],
                       pad_shape=data["pad_shape"], targets_path=targets_path, masks=masks, fraction=fraction,
                       seed=config["seed"])


# --- stage runners --------------------------------------------------------

def _generate(root: Path, config: dict, chash: str) -> None:
    data, seed = config["data"], config["seed"]
    (root / "data").mkdir(parents=True, exist_ok=True)
    if data["source"] != "synthetic":
        entries = read_manifest(data["manifest"])
        for e in entries:
            e["volume_path"] = str(resolve_volume_path(data["manifest"], e["volume_path"]).resolve())
        write_manifest(root / MANIFEST, entries)
        shutil.copyfile(data["labels_csv"], root / REFERENCE)
        return
    names = [e["name"] for e in vocabulary_entries(config)]
    shape = data["volume_shape"]
    vols, reps, labs = generate_synthetic_corpus(
        data["n"], names, shape, derive_seed(seed, 1), spacing_mm=data["spacing_mm"],
        prevalence=data["prevalence"], noise_hu=data["noise_hu"], id_prefix="syn")
    train, val = split_ids([v.id for v in vols], data["validation_fraction"], derive_seed(seed, 3))
    split_of = {**{i: "train" for i in train}, **{i: "validation" for i in val}}
    if data.get("external_n", 0) > 0:
        ev, er, el = generate_synthetic_corpus(
            data["external_n"], names, shape, derive_seed(seed, 2), spacing_mm=data["spacing_mm"],
            prevalence=data["prevalence"], noise_hu=data["external_noise_hu"],
            offset_hu=data["external_offset_hu"], id_prefix="ext")
        vols, reps, labs = vols + ev, reps + er, labs + el
        split_of.update({v.id: "external" for v in ev})
    vol_dir = root / VOLUMES
    if vol_dir.exists():
        shutil.rmtree(vol_dir)
    vol_dir.mkdir(parents=True)
    entries = []
    for v, r in zip(vols, reps):
        write_volume(vol_dir / f"{v.id}.vol", v)
        entries.append({"id": v.id, "volume_path": f"volumes/{v.id}.vol", "report_text": r.text, "split": split_of[v.id]})
    write_manifest(root / MANIFEST, entries)
    write_labels_csv(root / REFERENCE, [v.id for v in vols], labs)


def _extract(root: Path, config: dict, chash: str) -> None:
    ext = config["extract"]
    vocab = vocabulary_entries(config)
    names = [e["name"] for e in vocab]
    reports = manifest_reports(read_manifest(root / MANIFEST))
    template = default_template(vocab)
    defaults = {k: ext[k] for k in ("max_concurrency", "retry_budget", "timeout_s") if k in ext}
    for spec in ext["backends"]:
        backend = make_backend(dict(spec), names, defaults)
        results = extract_corpus(backend, template, reports)
        out = root / results_path(backend.name)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_results(out, results)
        summary = {**summarize_results(results), "requests": backend.requests, "max_in_flight": backend.max_in_flight}
        (out.parent / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        log.info("extract %s: %s", backend.name, summary)


def _merge(root: Path, config: dict, chash: str) -> None:
    per_backend = [read_results(root / results_path(n)) for n in backend_names(config)]
    merged = merge_labels(per_backend)
    if not merged.ids:
        raise ValueError("no report was parsed by any backend")
    write_labels_csv(root / MERGED, merged.ids, merged.labels)
    ref_ids, ref_labels = read_labels_csv(root / REFERENCE)
    reference = dict(zip(ref_ids, ref_labels))
    quality = {"dropped": merged.dropped}
    candidates = {"merged": dict(zip(merged.ids, merged.labels))}
    for name, results in zip(backend_names(config), per_backend):
        candidates[name] = {r.report_id: r.label for r in results if r.ok}
    for name, labels in candidates.items():
        ids = [i for i in labels if i in reference]
        if ids:
            quality[name] = evaluate_label_quality([labels[i] for i in ids], [reference[i] for i in ids]).to_dict()
    (root / QUALITY).write_text(json.dumps(quality, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _pretrain(root: Path, config: dict, chash: str) -> None:
    pre = config["pretrain"]
    sets = load_sets(root, config, ["train", "validation"], targets=pre["label_source"], masks=bool(pre["ass"]),
                     fraction=config["data"].get("train_fraction", 1.0))
    if "train" not in sets:
        raise ValueError("no training volumes with labels")
    cfg = {k: v for k, v in pre.items() if k != "label_source"}
    cfg["crop_shape"] = config["data"]["crop_shape"]
    out = root / "pretrain"
    out.mkdir(parents=True, exist_ok=True)
    state = supervised_train(cfg, sets["train"], sets.get("validation"), seed=config["seed"], out_dir=out, config_hash=chash)
    save_state(root / PRETRAIN_CKPT, state)
    write_trace(root / PRETRAIN_TRACE, state)


def _align(root: Path, config: dict, chash: str) -> None:
    sets = load_sets(root, config, ["train"], fraction=config["data"].get("train_fraction", 1.0))
    if "train" not in sets:
        raise ValueError("no training volumes")
    mode, path = parse_init(config["align"]["init"])
    if mode == "supervised":
        path = path or str(root / PRETRAIN_CKPT)
    cfg = {k: v for k, v in config["align"].items() if k != "init"}
    cfg["encoder"] = config["pretrain"]["encoder"]
    cfg["crop_shape"] = config["data"]["crop_shape"]
    # kept with the model so embedding and evaluation can preprocess new manifests the same way
    cfg["pad_shape"] = config["data"]["pad_shape"]
    cfg["target_spacing_mm"] = config["data"]["target_spacing_mm"]
    state = align_train(cfg, sets["train"], mode, path, seed=config["seed"], config_hash=chash)
    (root / "align").mkdir(parents=True, exist_ok=True)
    save_align_state(root / ALIGN_CKPT, state)
    with open(root / ALIGN_LOSS, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        fh.writelines(f"{i},{loss!r}\n" for i, loss in enumerate(state.loss_history, 1))


def _evaluate(root: Path, config: dict, chash: str) -> None:
    settings = config["evaluate"]
    state = load_align_state(root / ALIGN_CKPT)
    sets = load_sets(root, config, list(settings["splits"]))
    missing = [s for s in settings["splits"] if s not in sets]
    if missing:
        log.warning("splits without volumes are not evaluated: %s", missing)
    report = evaluate_state(state, sets, settings)
    train_ids = [e["id"] for e in read_manifest(root / MANIFEST) if e["split"] == "train"]
    report["n_train"] = len(train_subset(train_ids, config["data"].get("train_fraction", 1.0), config["seed"]))
    write_report(root / REPORT, report)
    write_per_class_csv(root / PER_CLASS, report)


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


RUNNERS = {"generate-data": _generate, "extract-labels": _extract, "merge-labels": _merge,
           "pretrain": _pretrain, "align": _align, "evaluate": _evaluate}


# --- driver ---------------------------------------------------------------

def _up_to_date(manifest: RunManifest, prev: dict | None, chash: str, inputs: dict, outputs: list[str]) -> bool:
    if prev is None or prev["config_hash"] != chash or prev["inputs"] != inputs:
        return False
    if sorted(prev["outputs"]) != sorted(outputs):
        return False
    return manifest.digests(outputs) == prev["outputs"]


def run_pipeline(config: dict, stages=None, force: bool = False) -> list[dict]:
    """Run ``stages`` (default: all, always in pipeline order) under ``config["output_root"]``.

    Returns the run-log records written by this call. A failing stage is logged
    with status "failed" and re-raised as :class:`StageError`.
    """
    requested = list(stages) if stages else list(STAGES)
    unknown = [s for s in requested if s not in STAGES]
    if unknown:
        raise ConfigError(f"unknown stages {unknown}; expected a subset of {STAGES}")
    order = [s for s in STAGES if s in requested]
    root = Path(config["output_root"])
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    chash = config_hash(config)
    manifest = RunManifest(root)
    dirty = force
    written = []

    def log_record(stage, status, inputs, outputs, seconds, error=None):
        rec = {"stage": stage, "config_hash": chash, "inputs": inputs, "outputs": outputs,
               "wall_clock_s": round(seconds, 3), "status": status,
               "started_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
        if error:
            rec["error"] = error
        manifest.append(rec)
        written.append(rec)

    for stage in order:
        input_paths, output_paths = stage_io(stage, config)
        absent = [p for p in input_paths if not (root / p).exists()]
        if absent:
            msg = "; ".join(f"{p} is missing (produced by stage {producer_of(p)!r})" for p in absent)
            log_record(stage, "failed", {}, {}, 0.0, msg)
            raise MissingInputError(stage, msg)
        inputs = manifest.digests(input_paths)
        if not dirty and _up_to_date(manifest, manifest.latest(stage), chash, inputs, output_paths):
            log.info("%s: up to date, skipped", stage)
            log_record(stage, "skipped", inputs, manifest.digests(output_paths), 0.0)
            continue
        log.info("%s: running", stage)
        t0 = time.perf_counter()
        try:
            RUNNERS[stage](root, config, chash)
        except ConfigError:
            raise
        except Exception as exc:
            log_record(stage, "failed", inputs, {}, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
            raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
        outputs = manifest.digests(output_paths)
        lost = [p for p, d in outputs.items() if d is None]
        if lost:
            log_record(stage, "failed", inputs, {}, time.perf_counter() - t0, f"outputs not written: {lost}")
            raise StageError(stage, f"outputs not written: {lost}")
        log_record(stage, "ok", inputs, outputs, time.perf_counter() - t0)
        dirty = True
    return written

