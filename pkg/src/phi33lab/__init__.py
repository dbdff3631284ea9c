"""Spectral Monte-Carlo laboratory for the renormalized quadratic Gibbs
measure on the 3-torus and its damped stochastic wave dynamics."""

__version__ = "0.1.0"
