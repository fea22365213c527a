"""Numerical laboratory for the n-harmonic map heat flow.

Equivariant finite-time-blowup simulator for maps S^n -> S^n plus the
analysis toolkit: energy identities, Pohozaev balance, oscillation and neck
diagnostics, bubble extraction, and the covering-space width construction.
"""

__version__ = "0.1.0"

from .fields import RadialProfile, EnergyReport, n_energy  # noqa: F401
from .flow import (FlowConfig, FlowTrajectory, BlowupEvent, run, step,  # noqa: F401
                   reduced_energy, reduced_tension, detect_blowup)
from .manifold import SphereTarget, TorusTarget  # noqa: F401
