"""Monte Carlo laboratory for Harnack inequalities of SDEs driven by subordinated Brownian motion."""

__version__ = "0.1.0"
