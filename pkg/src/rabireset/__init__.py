"""Simulation and analysis of Rabi-driven reset of a high-Q bosonic mode.

Subsystem order is (qubit, memory, readout); internal units are us and rad/us.
"""

__version__ = "0.1.0"

from .hilbert import MEMORY, QUBIT, READOUT, DensityMatrix, Operator, SpaceLayout  # noqa: E402
from .model import DriveParams, FrameTag, SystemParams  # noqa: E402

__all__ = [
    "__version__",
    "QUBIT",
    "MEMORY",
    "READOUT",
    "SpaceLayout",
    "Operator",
    "DensityMatrix",
    "SystemParams",
    "DriveParams",
    "FrameTag",
]
