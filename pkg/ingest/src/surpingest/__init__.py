"""Corpus ingestion: produces the logit archive, word table, and
reading-time table consumed by surpscale (formats documented in the
repository's FORMATS.md)."""

from . import corpus, extract, formats, tag

__all__ = ["corpus", "extract", "formats", "tag"]
__version__ = "0.1.0"
