"""Desk-scale visual inspection pipeline for assembly-line part kits."""

__version__ = "0.1.0"
