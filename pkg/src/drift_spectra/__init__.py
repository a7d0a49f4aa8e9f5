"""Principal eigenvalue of drifted Laplace operators on closed surfaces.

The package assembles the weighted P1 pencil for ``-Delta_f u + c u`` with
drift strength ``s``, solves for the principal eigenpair, and compares the
large-``s`` behaviour with ``min c`` over the local maxima of ``f``.
"""

from .exprlang import parse, evaluate
from .mesh import TriMesh, ScalarField, icosphere, uv_torus, load_off, sample, validate
from .morse import predicted_limit
from .spectral import assemble, smallest_eigenpair
from .experiment import sweep

__version__ = "0.1.0"

__all__ = ["parse", "evaluate", "TriMesh", "ScalarField", "icosphere", "uv_torus",
           "load_off", "sample", "validate", "predicted_limit", "assemble",
           "smallest_eigenpair", "sweep", "__version__"]
