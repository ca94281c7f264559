"""Domain adaptation for radioisotope identification on surrogate gamma spectra."""

__version__ = "0.1.0"
