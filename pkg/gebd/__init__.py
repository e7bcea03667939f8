# Dual-pass generic event boundary detection
__version__ = "1.0.0"
