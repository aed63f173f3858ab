"""SALM: interactive socially-aware navigation with LLM/RL hybrid planning."""

__version__ = "0.1.0"
