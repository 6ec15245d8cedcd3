"""Minority-class mining for long-tailed datasets.

Pipeline: train a backbone on a skewed split, replace its final layer with a
focal-loss recalibration layer, fit an autoencoder on the calibrated logits,
and rank unlabeled examples by how badly their class-probability pattern
reconstructs.
"""

__version__ = "0.1.0"
