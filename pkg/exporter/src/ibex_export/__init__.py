"""Activation and mask exporter producing UIBF datasets for ibex.

This is the only component that touches a deep-learning framework: it
hooks a model's last spatial layer, records post-activation cuboids for an
image folder, rasterizes segmentation masks, and writes the same manifest
formats the analysis library consumes.
"""

__version__ = "0.1.0"
