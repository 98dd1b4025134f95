"""Numerical verification of interior regularity for the stationary linearized Boltzmann equation."""

from .geometry import Ball, ConvexDomain, Ellipsoid
from .kernel import CenteredQuadrature, CollisionKernel, PotentialModel, VelocityQuadrature, make_kernel
from .transport import BoundaryDatum, DistributionField, PhaseGrid, picard_solve

__all__ = ["Ball", "ConvexDomain", "Ellipsoid", "CenteredQuadrature", "CollisionKernel", "PotentialModel",
           "VelocityQuadrature", "make_kernel", "BoundaryDatum", "DistributionField", "PhaseGrid", "picard_solve"]
__version__ = "0.1.0"
