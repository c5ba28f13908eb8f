"""Self-stabilizing TDMA slot allocation and alignment for wireless ad-hoc networks."""

from .engine import FaultSpec, SimConfig, Simulation, Trace, run
from .topology import Topology, grid, path, star, unit_disk

__all__ = ["FaultSpec", "SimConfig", "Simulation", "Topology", "Trace", "grid", "path", "run", "star", "unit_disk"]
__version__ = "0.1.0"
