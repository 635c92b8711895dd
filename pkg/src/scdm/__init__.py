"""Cross-modal EEG to fNIRS diffusion toolkit."""

__version__ = "0.1.0"
