"""EEG-to-speech translation with two coupled DualGANs through a transition domain."""

__version__ = "0.1.0"
