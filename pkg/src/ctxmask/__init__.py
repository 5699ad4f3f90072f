"""Context-dependence analysis for object detectors on COCO-format data."""

__version__ = "0.1.0"
