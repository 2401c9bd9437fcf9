"""Prescribed conjugate instants for symplectic differential systems.

Numerical library and CLI for (a) constructing semi-Riemannian geodesic data
whose conjugate instants equal an arbitrary prescribed compact subset of
]a, b], and (b) independently verifying the construction by integrating the
associated symplectic differential system and detecting its conjugate
instants.
"""

from .kernels import BACKEND
from .sds import (
    ConjugateInstant,
    ConjugateReport,
    IsoPair,
    MorseSturm,
    SympDiffSystem,
    apply_isomorphism,
    conjugate_instants,
    crossing_data,
    flatten_B,
    fundamental_matrix,
    maslov_regular,
    to_morse_sturm,
)
from .symform import SymmetricForm, index_path, inertia
from .symplectic import LagrangianFrame, canonical_J, omega

__version__ = "1.0.0"

__all__ = [
    "BACKEND",
    "SympDiffSystem",
    "MorseSturm",
    "IsoPair",
    "ConjugateInstant",
    "ConjugateReport",
    "fundamental_matrix",
    "conjugate_instants",
    "crossing_data",
    "maslov_regular",
    "apply_isomorphism",
    "flatten_B",
    "to_morse_sturm",
    "SymmetricForm",
    "inertia",
    "index_path",
    "LagrangianFrame",
    "canonical_J",
    "omega",
    "__version__",
]
