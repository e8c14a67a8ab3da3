"""Event-driven Monte Carlo for a 1-D particle in a bounded periodic
potential under spatially inhomogeneous Poisson momentum kicks, plus the
statistical harness that verifies the diffusive momentum limit at desk scale.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    InvalidModelError,
    JumpFamily,
    KickField,
    ModelSpec,
    Modulation,
    Potential,
    averaged_kick,
    homogeneous_model,
    sigma,
    standard_cosine_model,
    validate,
)
