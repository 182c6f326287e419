# cvqpu/__init__.py
"""
Pulse-level simulator and gate calibrator for a chainable continuous-variable
superconducting processor (mode M, fluxonium F, rotation qubit R, coupler B).
"""
__version__ = "0.1.0"
