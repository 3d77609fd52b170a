"""Planner-guided bridge-policy learning at desk scale."""

__version__ = "0.1.0"
