"""grainforge: crop-image CNN classification and explainability toolkit."""

__version__ = "0.1.0"
