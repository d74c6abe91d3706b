"""Closed-form ODE discovery from videos of a moving object.

Submodules are imported on demand; importing the package itself does not load jax.
"""
__version__ = "0.1.0"
