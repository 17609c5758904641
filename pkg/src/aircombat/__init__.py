"""Multi-agent aerial combat arena with HAPPO and HASAC trainers."""

__version__ = "0.1.0"
