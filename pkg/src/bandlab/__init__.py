"""Numerical experiments on random band matrices: resolvents, diffusion kernels and delocalization."""

__version__ = "0.1.0"
