"""Multichannel sound source localization by variational inference over a
complex Gaussian mixture spatial model, with classical baselines, an
image-method room simulator, and an evaluation harness."""

__version__ = "0.1.0"
