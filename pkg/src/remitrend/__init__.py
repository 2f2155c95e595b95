"""Sparse trend models of clinician remifentanil target changes."""

__version__ = "0.1.0"
