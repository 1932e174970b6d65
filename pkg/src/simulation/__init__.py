"""Deterministic simulated TTS world used as ground truth for the loop."""
