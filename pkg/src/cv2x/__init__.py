"""Stochastic-geometry model of UL/DL decoupled access in C-V2X networks.

``analysis`` evaluates association probabilities, spectral efficiency and
coverage in closed or integral form; ``simulator`` estimates the same
quantities by Monte Carlo; ``cli`` runs figure sweeps and comparisons.
"""

__version__ = "0.1.0"
