"""End-to-end entity linking for short questions with a pluggable token encoder."""
__version__ = "0.1.0"
