"""Space-adiabatic perturbation theory for matrix-valued phase-space symbols."""
__version__ = "0.1.0"
