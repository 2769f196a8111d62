"""rieszlab: a numerical laboratory for Coulomb/Riesz point-energy problems.

Jellium and uniform-electron-gas energies on cubes, small-N multi-marginal
optimal transport with power-law costs, multi-scale ball decompositions of
the kernel, and experiment pipelines estimating the next-order constants of
both problems.
"""

from .core import (
    AccuracyError,
    ConstraintError,
    CubeDomain,
    ParameterError,
    PeriodicConfiguration,
    PointConfiguration,
    RieszKernel,
    SingularPairError,
    TruncatedKernel,
    UniformMeasure,
    UnsupportedRegimeError,
    extension_constant,
    fourier_constant,
    kernel_eval,
    kernel_regularize,
    kernel_truncate,
)
from .potentials import (
    CompositeChargeSystem,
    MultipoleCell,
    SignedChargeSystem,
    cube_cube_integral,
    fourier_zero_limit,
    multipole_tail,
    net_potential_integral,
    pairing,
    point_cube_integral,
    potential_h,
)
from .jellium import (
    EnergyBreakdown,
    MinimizationResult,
    check_separation,
    e_jel,
    e_ueg,
    jel_ueg_gap,
    jellium_gradient,
    jellium_lower_bound,
    minimize_jellium,
    separation_radius,
)
from .lattice import (
    AveragedMarginal,
    Lattice,
    averaged_plan_marginal,
    epstein_zeta,
    lattice_in_cube,
    periodic_energy_per_point,
    plan_energy_ueg,
    reflect_symmetrize,
)
from .transport import (
    Density1D,
    DiscretePlan,
    GrandCanonicalState,
    GridMarginal,
    exc,
    gc_ot,
    mmot_bruteforce,
    monotone_1d,
    plan_separation_bound,
    subadditivity_check,
)
from .decomposition import (
    BallPacking,
    DecompositionParams,
    PackingError,
    almost_subadditive_check,
    fg_energy_split,
    fg_parameters,
    swiss_cheese,
)
from .analysis import (
    ConstantEstimate,
    compare_constants,
    comparison_limits,
    extrapolate_constant,
    scan_s,
)

__version__ = "0.1.0"
