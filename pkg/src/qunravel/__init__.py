"""Unravelings of time-local master equations with signed rates.

Dense integration, pairing with a completely positive equation, jump
trajectories weighted by an influence martingale, the completely positive
embedding on a doubled space, and reversal of CP evolutions.
"""
__version__ = "0.1.0"

from ._backend import BACKEND, available_backends
from .embedding import (EmbeddedMasterEquation, ancilla_state, build_embedding,
                        commutant_embedding_psd, extract_blocks, integrate_embedded)
from .equations import (CanonicalMasterEquation, PairedEquations, canonical_equation,
                        gell_mann_basis, integrate_density, min_isotropic_noise, optimal_c, pair,
                        shift_transform, spa_deformed_step, validate_canonical)
from .errors import (DimensionError, IllConditionedError, IntegrationError, NegativeRateError,
                     NotHermitianError, NotPSDError, PairingError, StepSizeError)
from .recovery import (build_reversal, recover_by_embedding, recover_by_martingale,
                       thermal_qubit_equation)
from .tolerances import get_tolerances, set_tolerances
from .unraveling import (EnsembleEstimate, ensemble_estimate, ensemble_noncanonical, pad_povm,
                         simulate_noncanonical, simulate_trajectory, variance_bound_check)

__all__ = [
    "BACKEND", "CanonicalMasterEquation", "DimensionError", "EmbeddedMasterEquation",
    "EnsembleEstimate", "IllConditionedError", "IntegrationError", "NegativeRateError",
    "NotHermitianError", "NotPSDError", "PairedEquations", "PairingError", "StepSizeError",
    "ancilla_state", "available_backends", "build_embedding", "build_reversal",
    "canonical_equation", "commutant_embedding_psd", "ensemble_estimate", "ensemble_noncanonical",
    "extract_blocks", "gell_mann_basis", "get_tolerances", "integrate_density",
    "integrate_embedded", "min_isotropic_noise", "optimal_c", "pad_povm", "pair",
    "recover_by_embedding", "recover_by_martingale", "set_tolerances", "shift_transform",
    "simulate_noncanonical", "simulate_trajectory", "spa_deformed_step",
    "thermal_qubit_equation", "validate_canonical", "variance_bound_check",
]
