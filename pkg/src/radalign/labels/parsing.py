from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..data.records import LabelKind, LabelVector


class FormatErrorReason(str, Enum):
    WRONG_COUNT = "wrong_count"
    NON_BINARY_TOKEN = "non_binary_token"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class FormatError:
    raw_response: str
    reason: FormatErrorReason
    detail: str = ""


@dataclass
class ExtractionResult:
    report_id: str
    backend_name: str
    label: LabelVector | None = None
    error: FormatError | None = None

    def __post_init__(self):
        if (self.label is None) == (self.error is None):
            raise ValueError("exactly one of label / error must be set")

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_json(self) -> dict:
        out = {"report_id": self.report_id, "backend_name": self.backend_name}
        if self.label is not None:
            out["label"] = [int(v) for v in self.label.values]
            out["vocabulary"] = list(self.label.vocabulary)
        else:
            out["error"] = {"reason": self.error.reason.value, "raw_response": self.error.raw_response,
                            "detail": self.error.detail}
        return out

    @classmethod
    def from_json(cls, d: dict, vocabulary: list[str] | None = None) -> ExtractionResult:
        if "label" in d:
            vocab = d.get("vocabulary") or vocabulary
            return cls(d["report_id"], d["backend_name"], label=LabelVector(d["label"], list(vocab), LabelKind.HARD))
        e = d["error"]
        return cls(d["report_id"], d["backend_name"],
                   error=FormatError(e["raw_response"], FormatErrorReason(e["reason"]), e.get("detail", "")))


_FENCE = re.compile(r"^```[A-Za-z0-9]*[ \t]*\n(.*)\n[ \t]*```$", re.DOTALL)
_INT_TOKEN = re.compile(r"^[+-]?\d+$")


def _strip_fence(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1).strip() if m else text


def parse_response(raw: str, C: int, vocabulary: list[str] | None = None) -> LabelVector | FormatError:
    """Parse ``C`` comma-separated 0/1 tokens; every problem comes back as a FormatError."""
    if C < 1:
        raise ValueError("C must be >= 1")
    vocab = list(vocabulary) if vocabulary is not None else [f"class_{i}" for i in range(C)]
    if len(vocab) != C:
        raise ValueError("vocabulary length must equal C")
    if not isinstance(raw, str):
        return FormatError(repr(raw), FormatErrorReason.UNPARSEABLE, "response is not text")
    body = _strip_fence(raw.strip())
    if not body:
        return FormatError(raw, FormatErrorReason.UNPARSEABLE, "empty response")
    tokens = [tok.strip() for tok in body.split(",")]
    bad = [tok for tok in tokens if not _INT_TOKEN.match(tok)]
    if bad:
        return FormatError(raw, FormatErrorReason.UNPARSEABLE, f"non-numeric token {bad[0]!r}")
    if len(tokens) != C:
        return FormatError(raw, FormatErrorReason.WRONG_COUNT, f"expected {C} values, got {len(tokens)}")
    nonbinary = [tok for tok in tokens if tok not in ("0", "1")]
    if nonbinary:
        return FormatError(raw, FormatErrorReason.NON_BINARY_TOKEN, f"token {nonbinary[0]!r}")
    return LabelVector(np.array([int(tok) for tok in tokens], dtype=np.float64), vocab, LabelKind.HARD)


def format_labels(label: LabelVector | np.ndarray) -> str:
    values = label.values if isinstance(label, LabelVector) else np.asarray(label)
    return ",".join("1" if v >= 0.5 else "0" for v in values)
