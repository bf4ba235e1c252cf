"""Turn dataset web pages into DCAT-aligned, FAIR-scored catalog records."""

__version__ = "0.1.0"
