"""Neural-field reconstruction of undersampled golden-angle radial cine MRI."""

__version__ = "0.1.0"
