"""Priority-graph coordination of robots crossing an intersection on fixed paths."""

__version__ = "0.1.0"
