"""Attention-zone probing for span-extraction reading comprehension models."""

__version__ = "0.1.0"
