# core/__init__.py
"""Core functionality for DavidSim: tensors, graphs, analysis, speech and the bus."""
