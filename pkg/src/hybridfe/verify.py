"""Verification (stub)."""
