"""Multi-fidelity neural emulators with learned coordinate encodings."""

__version__ = "0.1.0"
