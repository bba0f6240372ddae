# app/__init__.py
"""Configuration, controllers and command line for DavidSim."""
