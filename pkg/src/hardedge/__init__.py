"""Stochastic Bessel and sine canonical systems, their coupling, and spectral diagnostics."""
