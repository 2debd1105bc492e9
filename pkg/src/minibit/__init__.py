"""Desk-scale transfer-learning classification pipeline."""
