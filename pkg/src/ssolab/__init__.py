"""Subsynchronous oscillation forensics and inverter-grid simulation."""
__version__ = "0.1.0"
