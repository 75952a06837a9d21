"""Relational question answering over symbolic scene descriptions."""

__version__ = "0.1.0"
