"""Open-world annotation and incremental dual-encoder tuning workbench."""

__version__ = "0.1.0"
