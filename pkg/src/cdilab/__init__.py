"""Numerical laboratory for conductivity recovery from projected current-density data.

Modules: :mod:`grid` and :mod:`fields` (discretization), :mod:`forward`
(elliptic solver), :mod:`regions` (visibility and streamline regions),
:mod:`decomposition` (the projected-current identity), :mod:`reconstruction`
(two-stage recovery), :mod:`harness` (stability sweeps) and :mod:`cli`.
"""

from .decomposition import ProjectionMode
from .fields import ScalarField, VectorField
from .grid import BoundaryArcSet, DomainGrid, RegionMask

__all__ = ["BoundaryArcSet", "DomainGrid", "ProjectionMode", "RegionMask", "ScalarField", "VectorField"]
__version__ = "0.1.0"
