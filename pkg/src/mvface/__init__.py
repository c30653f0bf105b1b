"""Multi-view face verification with fused Gabor eigenface and canonical covariate features."""

__version__ = "0.1.0"
