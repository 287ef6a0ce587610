"""Sparse reflect beamforming for active reconfigurable intelligent surfaces.

Modules, bottom-up: ``scenario`` (geometry and fading), ``system_model``
(SINR and power models), ``conic`` (solver wrappers), ``nulling``,
``sumrate``, ``powermin`` and ``experiments``.
"""
__version__ = "0.1.0"
