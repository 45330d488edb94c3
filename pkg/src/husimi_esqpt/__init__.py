"""Husimi-function diagnostics of excited-state quantum phase transitions.

Lipkin and coupled-top models, SU(2) coherent-state phase space, Husimi
fields with their localization measures, quench dynamics and critical-point
estimators.
"""

__version__ = "0.1.0"
