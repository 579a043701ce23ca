"""Density-aware triplet and quadruplet metric learning on numpy."""
from .errors import (DegenerateEnclosure, DensemetricError, EmptyMiningResult,
                     GenerationFailed, InvalidInput, NumericalError, ParseError,
                     StateError, TrainingStalled)

__version__ = "0.1.0"
