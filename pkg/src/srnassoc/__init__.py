"""User association in ambient-backscatter symbiotic radio networks with deep Q-learning."""

__version__ = "0.1.0"
