from __future__ import annotations

import re
from dataclasses import dataclass

from ..data.records import ReportRecord

PLACEHOLDER = "{text}"

DEFAULT_USER_PATTERN = "Radiology report:\n{text}"

_SYSTEM_HEADER = (
    "You are a radiologist reading chest CT reports. For the report you are given, "
    "decide for each of the {count} conditions below whether it is present (1) or absent (0). "
    "A condition that is not mentioned, or is mentioned only as negated, is absent.\n\nConditions:\n"
)
_SYSTEM_FOOTER = (
    "\nAnswer with exactly {count} comma-separated values, each 0 or 1, in the order listed above. "
    "Do not write anything else."
)


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    user_text_pattern: str
    vocabulary: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        count = self.user_text_pattern.count(PLACEHOLDER)
        if count != 1:
            raise ValueError(f"user pattern must contain {PLACEHOLDER} exactly once, found {count}")
        lowered = self.system_text.lower()
        for name in self.vocabulary:
            n = len(re.findall(r"(?<![a-z])" + re.escape(name.lower()) + r"(?![a-z])", lowered))
            if n != 1:
                raise ValueError(f"system text must mention {name!r} exactly once, found {n}")


def default_template(vocabulary: list[dict[str, str]] | list[str],
                     user_text_pattern: str = DEFAULT_USER_PATTERN) -> PromptTemplate:
    """Plain numbered list of one-line category definitions plus the output format rule."""
    entries = [{"name": e, "definition": ""} if isinstance(e, str) else e for e in vocabulary]
    lines = []
    for i, e in enumerate(entries, 1):
        line = f"{i}. {e['name']}"
        if e.get("definition"):
            line += f": {e['definition']}"
        lines.append(line)
    count = len(entries)
    system = _SYSTEM_HEADER.format(count=count) + "\n".join(lines) + "\n" + _SYSTEM_FOOTER.format(count=count)
    return PromptTemplate(system, user_text_pattern, tuple(e["name"] for e in entries))


def build_prompt(t: PromptTemplate, report: ReportRecord | str) -> tuple[str, str]:
    text = report.text if isinstance(report, ReportRecord) else report
    if not text or not text.strip():
        raise ValueError("report text is empty")
    return t.system_text, t.user_text_pattern.replace(PLACEHOLDER, text)
