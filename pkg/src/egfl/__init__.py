"""Enhanced grid-following inverter control: design, analysis and simulation."""

__version__ = "0.1.0"
