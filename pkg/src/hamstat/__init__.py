"""Numerical laboratory for Hamiltonian stationary Lagrangian gradient graphs.

Submodules:

* :mod:`hamstat.fields` -- grids, fields and finite-difference operators
* :mod:`hamstat.phase` -- induced metric, Lagrangian phase, volume, spread
* :mod:`hamstat.variation` -- first variation, harmonicity residual, descent
* :mod:`hamstat.rotation` -- Lewy-Yuan rotation of sampled potentials
* :mod:`hamstat.ellipticity` -- coefficient tensor and ellipticity margins
* :mod:`hamstat.cli` -- command-line front end
"""

from .fields import (
    Grid,
    GridError,
    MarginReport,
    SamplingPlan,
    ScalarField,
    SymmetricMatrixField,
    VectorField,
    difference_quotient,
    gradient,
    hessian,
    integrate,
    k_convexity_margin,
    mollify,
)
from .fieldio import read_field, write_field
from .phase import (
    grassmannian_spread,
    induced_metric,
    mean_curvature_norm,
    phase,
    volume,
)
from .presets import make_preset
from .variation import (
    BoundaryMask,
    DescentParams,
    DescentTrace,
    descend,
    first_variation_divergence,
    first_variation_phase,
    harmonicity_residual,
    volume_gradient,
)
from .rotation import (
    HypothesisError,
    InversionError,
    RotatedGraph,
    RotationParams,
    c11_bound,
    convexity_propagation_check,
    inverse_rotate,
    invert_coordinates,
    rotate_graph,
    rotate_to_grid,
    rotated_gradient_check,
)
from .ellipticity import (
    CoefficientTensor,
    SampledMargin,
    coefficient_derivative,
    coefficient_tensor,
    condition4_margin,
    ellipticity_lower_bound,
    find_c_n,
)

__version__ = "0.1.0"
