"""Object-navigation lab: procedural houses, a two-level agent and its evaluation."""

__version__ = "0.1.0"
