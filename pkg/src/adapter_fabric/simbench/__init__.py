"""Deterministic mock inference backends and a closed-loop load generator."""
