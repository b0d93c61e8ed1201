"""Numerical operator calculus for perturbed Dirac-type operators on
periodic grids: discrete exterior complexes, holomorphic functional calculus,
Hodge projections, quadratic-estimate functionals, and the application
operators built from them."""

__version__ = "0.1.0"
