"""CPU-first pipeline for classifying kinetic vehicular injury in triage notes."""

__version__ = "0.1.0"

from kinetic_triage.errors import DataError, NumericError

__all__ = ["DataError", "NumericError", "__version__"]
