# converters/__init__.py
"""Byte-level converters: mu-law companding and bus framing."""

__all__ = ["mulaw", "framing"]
