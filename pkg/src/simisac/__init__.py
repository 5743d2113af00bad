"""Stacked-metasurface ISAC: channel models, CRB-driven joint design, validation oracles."""
from .channels import ChannelSet, Scenario, build_channels, db_to_linear, linear_to_db
from .mao import MaoParams, MaoResult, mao_optimize
from .metrics import crb_extended, sinr_all
from .propagation import PhaseStack, SimGeometry, diffraction_matrix, end_to_end_matrix

__all__ = [
    "ChannelSet", "MaoParams", "MaoResult", "PhaseStack", "Scenario", "SimGeometry",
    "build_channels", "crb_extended", "db_to_linear", "linear_to_db", "diffraction_matrix", "end_to_end_matrix", "mao_optimize", "sinr_all",
]
__version__ = "0.1.0"
