"""Fingerprint localization against ray-traced RF maps of a digital twin.

Pipeline: ``scene`` (geometry and grid) -> ``raytrace`` (specular paths) -> ``channel``
(beamformed subband RSS) -> ``rfmap`` (quantized database) -> ``locate`` (reports and
maximum-likelihood search) -> ``evaluation`` (Monte Carlo experiments).
"""

__version__ = "0.1.0"

from .channel import Codebook, SubbandChannel, array_response, dft_codebook, rss, rss_matrix, subband_channels
from .locate import (
    LocalizationResult,
    MeasurementReport,
    ReportSpec,
    localize,
    log_likelihood,
    sample_report,
    select_top_beams,
)
from .raytrace import Path, PathSet, trace, trace_all, trace_between
from .rfmap import RfMapDb, build, load, save
from .scene import PositionGrid, Scene, generate_grid, load_scene, point_in_building, segment_occluded

__all__ = [
    "Codebook", "SubbandChannel", "array_response", "dft_codebook", "rss", "rss_matrix", "subband_channels",
    "LocalizationResult", "MeasurementReport", "ReportSpec", "localize", "log_likelihood", "sample_report",
    "select_top_beams", "Path", "PathSet", "trace", "trace_all", "trace_between", "RfMapDb", "build", "load",
    "save", "PositionGrid", "Scene", "generate_grid", "load_scene", "point_in_building", "segment_occluded",
]
