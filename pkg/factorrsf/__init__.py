"""Random survival forests over factor-valued features."""

__version__ = "0.1.0"
