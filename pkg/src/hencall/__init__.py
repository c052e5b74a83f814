"""Laying-hen call recognition: segmentation, features, classifier, evaluation."""

__version__ = "0.1.0"
