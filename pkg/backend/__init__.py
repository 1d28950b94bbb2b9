"""EEG functional-connectivity depression recognition pipeline."""

__version__ = "1.0.0"
