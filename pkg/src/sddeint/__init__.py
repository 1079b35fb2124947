"""Strong-order schemes for stochastic delay-differential equations with
arbitrary fixed delays, on augmented time meshes."""

from .experiment import (
    ErrorRow,
    ErrorTable,
    ExperimentConfig,
    fit_slope,
    reference_solution,
    run_study,
    study_summary,
)
from .linalg import commutator, mat_exp
from .mesh import (
    AugmentedMesh,
    DelaySet,
    MeshMissError,
    MeshSizeError,
    accumulated_mesh_points,
    bellman_points,
    build_artm,
    build_augmented_mesh,
    locate,
    mesh_tolerance,
    neighbors,
    observation_times,
)
from .noise import (
    SeedInfo,
    StepIntegrals,
    WienerPaths,
    increments,
    sample_paths,
    simple_integrals,
    trapezoidal_integrals,
)
from .problem import SddeProblem, builtin, f_tilde, jacobian_delay, jacobian_x, list_problems
from .schemes import (
    DivergenceError,
    SchemeKind,
    Trajectory,
    UniformGrid,
    delayed_value,
    run_trajectory,
    step_em,
    step_mem,
    step_milstein,
    step_mm,
)

__version__ = "0.1.0"
