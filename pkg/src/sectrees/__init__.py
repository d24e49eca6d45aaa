"""Two-party secure training of decision trees, random forests and extra-trees."""

__version__ = "0.1.0"
