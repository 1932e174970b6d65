"""Closed-loop TTS corpus construction from uncurated speech."""
__version__ = "0.1.0"
