"""
Projective tractor calculus and the prolongation of the Killing tensor equation.

Modules
-------
jets        truncated multivariate Taylor arithmetic
expr        chart expression language
tensors     slot-typed tensors and jet fields
geometry    connections, curvature, projective change
tractor     tractor connection, Thomas-D operator, tractor curvature
killing     Killing candidates, splitting operators, prolongation connections
transport   geodesics, parallel transport, holonomy, solution dimensions
config, catalog, suite, cli
            geometry configuration, built-in geometries, checks, command line
"""

from .catalog import CATALOG, geometry
from .config import GeometryConfig, load_config
from .errors import (
    ConfigError,
    ConsistencyError,
    DomainError,
    DomainExitError,
    ExprNameError,
    ExprSyntaxError,
    KindError,
    NonFiniteError,
    OrderError,
    PreconditionError,
    ProjTractorError,
    ScaleError,
    ShapeError,
    SingularityError,
    UnsupportedRankError,
)
from .expr import Expr, eval_expr, eval_expr_jet, parse
from .geometry import AffineStructure, covd, curvature_stack, levi_civita, projective_change
from .jets import Jet, jet_combine, jet_of, jet_partial
from .killing import (
    KillingCandidate,
    candidate_jet,
    flat_case_check,
    inject_k,
    integrability_obstruction,
    killing_operator,
    rank1_prolongation_derivative,
    rank2_prolongation_derivative,
    rank2_Q_sharp,
    recover_k,
    splitting_L,
)
from .tensors import ChartTensor, JetField, antisymmetrize, contract, symmetrize, tensor_product, young_project_rr
from .tractor import (
    canonical_tractors,
    thomas_d,
    tractor_covd,
    tractor_curvature,
    tractor_frame,
    w_curvature,
    w_sharp,
)
from .transport import (
    first_integral_drift,
    flat_polynomial_oracle,
    holonomies,
    integrate_geodesic,
    parallel_transport,
    solution_space_dimension,
)

__version__ = "0.1.0"
