"""Semi-supervised sequence transduction with cycle/inter-domain losses and noisy student training."""

__version__ = "0.1.0"
