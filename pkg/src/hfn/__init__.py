"""Click-guided semi-automatic skin lesion segmentation."""

__version__ = "0.1.0"
