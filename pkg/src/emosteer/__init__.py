"""Activation steering of a small numpy transformer towards emotion styles,
with the scoring and statistics used to evaluate steered text."""

__version__ = "0.1.0"
