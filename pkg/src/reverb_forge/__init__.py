"""Room impulse response analysis, synthesis and simulation, plus the
reverberant dataset and scoring tools built on them."""

__version__ = "0.1.0"
