"""Interpretable orthonormal basis extraction for CNN feature spaces.

Learns a rotation of a layer's feature space whose directions act as
sparse one-hot concept detectors, labels them against annotated masks via
dataset-accumulated IoU, and scores bases with threshold-agnostic
interpretability metrics.
"""

__version__ = "0.1.0"
