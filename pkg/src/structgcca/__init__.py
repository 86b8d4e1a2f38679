"""Structured and sparse regularised generalised canonical correlation
analysis (RGCCA) with Nesterov-smoothed penalties."""
from .core import (Block, BlockConstraint, Design, FitResult, ModelSpec,
                   PenaltyAttachment, Tolerances, preprocess)
from .penalty import build_group_l12, build_tv1d
from .solver import fit, fit_component

__version__ = "0.1.0"

__all__ = ["Block", "BlockConstraint", "Design", "FitResult", "ModelSpec",
           "PenaltyAttachment", "Tolerances", "preprocess", "build_group_l12",
           "build_tv1d", "fit", "fit_component", "__version__"]
