"""LLM label extraction: prompting, strict parsing, multi-backend merging and scoring."""

from .backends import LLMBackend, MockBackend, OpenAICompatibleBackend, TransportError, make_backend
from .extract import MergedLabels, extract_corpus, merge_labels, read_results, summarize_results, write_results
from .parsing import ExtractionResult, FormatError, FormatErrorReason, format_labels, parse_response
from .prompt import PromptTemplate, build_prompt, default_template
from .quality import LabelQualityReport, evaluate_label_quality

__all__ = [
    "ExtractionResult",
    "FormatError",
    "FormatErrorReason",
    "LLMBackend",
    "LabelQualityReport",
    "MergedLabels",
    "MockBackend",
    "OpenAICompatibleBackend",
    "PromptTemplate",
    "TransportError",
    "build_prompt",
    "default_template",
    "evaluate_label_quality",
    "extract_corpus",
    "format_labels",
    "make_backend",
    "merge_labels",
    "parse_response",
    "read_results",
    "summarize_results",
    "write_results",
]
