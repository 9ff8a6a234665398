"""Distributed ontology integration engine."""

__version__ = "0.1.0"
