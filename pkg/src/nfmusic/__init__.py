"""Near-field wideband MUSIC with beam-squint correction for THz radar arrays."""

__version__ = "0.1.0"
