"""Neural-gain adaptive sliding-mode state observers."""
__version__ = "0.1.0"
