"""Latent discriminative generative decoder.

A shared latent space feeds two sparse variational Gaussian-process
paths: one reconstructs continuous features, the other classifies
through a probit link. Training maximizes a five-term evidence lower
bound over minibatches; prediction infers test latents from features
alone, either by per-point optimization or through an amortized
encoder.
"""

__version__ = "0.1.0"
