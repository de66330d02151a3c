"""Regenerative Monte Carlo integration on the real line driven by Brownian motion."""

__version__ = "0.1.0"
