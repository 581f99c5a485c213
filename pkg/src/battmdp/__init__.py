"""Multi-battery small-UAS energy simulation and MDP battery-reconfiguration policies."""

__version__ = "0.1.0"
