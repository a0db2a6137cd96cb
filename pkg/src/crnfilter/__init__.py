"""Simulation and particle filtering for multiscale stochastic reaction networks."""

import warnings

warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"
