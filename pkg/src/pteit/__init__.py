"""Polarization-tensor Hessian approximations for 2D EIT reconstruction."""

__version__ = "0.1.0"
