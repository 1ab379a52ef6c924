"""rwrelab: random walk in random environment simulation and LIL verification lab."""

__version__ = "0.1.0"
