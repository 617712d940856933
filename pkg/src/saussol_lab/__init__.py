"""Numerical laboratory for random piecewise expanding maps in several dimensions.

Transfer operators on grids, the oscillation seminorm, Lasota-Yorke constants,
random invariant densities and ergodic diagnostics.
"""

from .base_process import BaseProcess, build_process, forward_path, past_path, window
from .families import BUILTIN_NAMES, builtin_family
from .geometry import Box
from .grid import Grid, GridFunction
from .maps import BranchMap, MapFamily, SaussolMap
from .osc import OscParams, alpha_seminorm, v_alpha_norm
from .transfer import TransferBackend, build_ulam

__all__ = ["BaseProcess", "build_process", "forward_path", "past_path", "window", "BUILTIN_NAMES",
           "builtin_family", "Box", "Grid", "GridFunction", "BranchMap", "MapFamily", "SaussolMap", "OscParams",
           "alpha_seminorm", "v_alpha_norm", "TransferBackend", "build_ulam"]
