"""Point-cloud completion with a cascaded refinement generator and a patch discriminator."""

__version__ = "0.1.0"
