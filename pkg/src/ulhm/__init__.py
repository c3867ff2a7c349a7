"""Universal latent homeomorphic manifolds: metrics, verification and a trainable toy."""
__version__ = "0.1.0"
