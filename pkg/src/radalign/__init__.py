"""Radiology vision-language pre-training with LLM-extracted labels."""

__version__ = "0.1.0"
