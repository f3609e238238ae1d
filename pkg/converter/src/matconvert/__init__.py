"""Convert public SSVEP MAT recordings into the canonical archive format."""

from .convert import DimensionMismatchError, VerifyReport, convert, verify, verify_full
from .layouts import BENCHMARK, BETA, SourceLayout, layout_for, montage_64

__version__ = "0.1.0"
