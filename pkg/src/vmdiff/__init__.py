"""Color-image inpainting with a channel-perturbed score prior and Hankel low-rank completion."""

__version__ = "0.1.0"
