"""Policy belief learning for cooperative games with private information."""

__version__ = "0.1.0"
