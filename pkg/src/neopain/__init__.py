"""Neonatal pain-intensity estimation with a two-stream bilinear CNN and an LSTM.

Subpackages and modules:

- ``autodiff``: reverse-mode automatic differentiation on numpy arrays
- ``bilinear``: bilinear pooling, descriptor normalization, regression head
- ``backbone``: stand-in per-stream CNN feature extractors
- ``temporal``: LSTM sequence regressor
- ``data``: events, key-frame clips, augmentation, synthetic corpus
- ``train`` / ``evaluation``: training loop, metrics, LOSO and split protocols
- ``pipeline`` / ``cli``: the staged command-line workflow
"""

__version__ = "0.1.0"
