"""Monocular hand-object reconstructions to bimanual dexterous demonstration datasets."""

__version__ = "0.1.0"
