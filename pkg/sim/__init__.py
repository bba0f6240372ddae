# sim/__init__.py
"""Discrete-event simulation of the toy platform."""
