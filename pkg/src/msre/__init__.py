"""Harmonic minimal surfaces in random environments.

Modules: :mod:`~msre.lattice` (boxes, surfaces, discrete operators),
:mod:`~msre.disorder` (seeded random environments), :mod:`~msre.solvers`
(ground configurations), :mod:`~msre.greens` (Green's functions and walk
checks), :mod:`~msre.experiments` (replica statistics) and :mod:`~msre.cli`.
"""

__version__ = "0.1.0"
