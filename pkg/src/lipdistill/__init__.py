"""Temporal-head cost audits and knowledge distillation for word-level lipreading models."""

__version__ = "0.1.0"
