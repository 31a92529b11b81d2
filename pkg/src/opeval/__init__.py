"""Off-policy evaluation and selection on tabular MDPs."""

__version__ = "0.1.0"
