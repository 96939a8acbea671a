"""Incompressibility bounds for 2D Coulomb systems at desk scale.

Modules: gridfield (grids and discrete potential theory), tf (screening
regions), exclusion (audits and packing), plasma (jellium and plasma
Hamiltonians), gibbs (Metropolis sampling), bathtub (capped minimization),
cli (command line).
"""
__version__ = "0.1.0"
