"""Modular speech enhancement toolkit.

Specialized mask-estimation networks denoise a mixture in parallel; a
speech autoencoder scores each result by reconstruction error and the
best one wins.
"""

__version__ = "0.1.0"
