"""Numerical laboratory for type-I blowup of u_t = Δu + |u|^{p-1} u near the log-corrected profile."""

__version__ = "0.1.0"
