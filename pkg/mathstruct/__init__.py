"""Structure-aware pre-training for mathematical formulas."""

__version__ = "0.1.0"
