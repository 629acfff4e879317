"""partforge: compositional part-latent flow matching for 3-D shapes at desk scale."""

__version__ = "0.1.0"
