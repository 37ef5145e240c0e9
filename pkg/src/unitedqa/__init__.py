"""Hybrid extractive/generative open-domain question answering at desk scale.

Everything runs on a small reverse-mode autodiff engine over float64 numpy
arrays (:mod:`unitedqa.tensor`); readers are randomly initialised toy
transformers rather than pretrained models.
"""

__version__ = "0.1.0"
