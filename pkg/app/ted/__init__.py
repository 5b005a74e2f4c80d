"""Tolerant edit distance: split and merge errors beyond a boundary-shift tolerance."""

from .metrics import TedOptions, TedReport, ted
from .volume import LabelVolume, load_volume, save_volume

__all__ = ["LabelVolume", "TedOptions", "TedReport", "load_volume", "save_volume", "ted"]
