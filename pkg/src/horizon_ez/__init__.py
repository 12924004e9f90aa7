"""Random-horizon Epstein-Zin consumption-investment: PDE solve, exit law, verification."""

__version__ = "0.1.0"
