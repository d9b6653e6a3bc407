"""fbf-lab - forward-backward-forward splitting with variable metrics and errors."""

__version__ = "0.1.0"
