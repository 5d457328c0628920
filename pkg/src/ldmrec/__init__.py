"""Single-step conditional diffusion engine for implicit-feedback recommendation."""

__version__ = "0.1.0"
