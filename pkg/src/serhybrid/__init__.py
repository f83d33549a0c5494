"""Hybrid speech emotion recognition: a calibrated acoustic classifier with
confidence-based routing to rule-guided LLM reasoning for ambiguous samples."""

__version__ = "0.1.0"
