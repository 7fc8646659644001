from __future__ import annotations

import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.records import LabelKind, LabelVector, ReportRecord
from .backends import LLMBackend
from .parsing import ExtractionResult, FormatError, FormatErrorReason, parse_response
from .prompt import PromptTemplate, build_prompt

log = logging.getLogger(__name__)


def _extract_one(backend: LLMBackend, template: PromptTemplate, report: ReportRecord) -> ExtractionResult:
    system, user = build_prompt(template, report)
    vocab = list(template.vocabulary)
    last_exc = None
    for attempt in range(backend.retry_budget + 1):
        try:
            raw = backend(system, user)
        except Exception as exc:  # any transport failure consumes one attempt
            last_exc = exc
            log.debug("%s: attempt %d for %s failed: %s", backend.name, attempt + 1, report.id, exc)
            if backend.retry_backoff_s and attempt < backend.retry_budget:
                time.sleep(backend.retry_backoff_s * (attempt + 1))
            continue
        parsed = parse_response(raw, len(vocab), vocab)
        if isinstance(parsed, FormatError):
            return ExtractionResult(report.id, backend.name, error=parsed)
        return ExtractionResult(report.id, backend.name, label=parsed)
    err = FormatError("", FormatErrorReason.UNPARSEABLE, f"transport failed after {backend.retry_budget + 1} attempts: {last_exc}")
    return ExtractionResult(report.id, backend.name, error=err)


def extract_corpus(backend: LLMBackend, template: PromptTemplate, reports: list[ReportRecord]) -> list[ExtractionResult]:
    """Query ``backend`` once per report with at most ``backend.max_concurrency`` calls in flight.

    Results come back in input order whatever the completion order.
    """
    if not reports:
        raise ValueError("no reports to extract")
    with ThreadPoolExecutor(max_workers=backend.max_concurrency) as pool:
        return list(pool.map(lambda r: _extract_one(backend, template, r), reports))


def summarize_results(results: list[ExtractionResult]) -> dict:
    reasons = Counter(r.error.reason.value for r in results if not r.ok)
    return {
        "n_reports": len(results),
        "n_parsed": sum(r.ok for r in results),
        "n_errors": sum(not r.ok for r in results),
        "errors_by_reason": dict(sorted(reasons.items())),
    }


def write_results(path: str | Path, results: list[ExtractionResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_results(path: str | Path) -> list[ExtractionResult]:
    with open(path, encoding="utf-8") as fh:
        return [ExtractionResult.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass
class MergedLabels:
    ids: list[str]
    labels: list[LabelVector]
    dropped: list[str] = field(default_factory=list)


def merge_labels(per_backend: list[list[ExtractionResult]]) -> MergedLabels:
    """Average the parsed vectors of every backend per report into soft labels.

    Errored backends are skipped for that report; reports with no parse at all are dropped.
    """
    if not per_backend:
        raise ValueError("need at least one backend")
    ids = [r.report_id for r in per_backend[0]]
    for results in per_backend[1:]:
        other = [r.report_id for r in results]
        if other != ids:
            raise ValueError(f"backend {results[0].backend_name if results else '?'} is not aligned by report id")
    merged_ids, merged, dropped = [], [], []
    for i, rid in enumerate(ids):
        parsed = [results[i].label for results in per_backend if results[i].ok]
        if not parsed:
            dropped.append(rid)
            continue
        vocab = parsed[0].vocabulary
        if any(p.vocabulary != vocab for p in parsed):
            raise ValueError(f"vocabulary mismatch across backends for report {rid!r}")
        values = np.mean(np.stack([p.values for p in parsed]), axis=0)
        merged_ids.append(rid)
        merged.append(LabelVector(values, list(vocab), LabelKind.SOFT))
    return MergedLabels(merged_ids, merged, dropped)
