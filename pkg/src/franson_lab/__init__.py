"""Desk-scale simulator and analysis toolkit for time-bin entangled
photon-pair experiments: exact two-qubit state math, pair-source
statistics, physical-effect models, a seeded Monte-Carlo time-tag engine,
calibration fitting and maximum-likelihood state tomography."""

__version__ = "0.1.0"

from . import analysis, config, effects, qstate, simulate, source, tomography

__all__ = [
    "__version__",
    "analysis",
    "config",
    "effects",
    "qstate",
    "simulate",
    "source",
    "tomography",
]
