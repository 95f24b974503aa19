"""Fast-slow dynamics of a two-strategy resource model, with fold analysis
and canard-cycle stabilization."""

from .model import (
    DecisionParamsFull,
    DecisionParamsReduced,
    NormalFormParams,
    PerturbationSpec,
    PoleError,
    State,
    SystemDefinition,
    classic_normal_form_params,
    eval_full,
    eval_normal_form,
    eval_perturbed_normal_form,
    eval_reduced,
    full_system,
    normal_form_system,
    perturbed_normal_form_system,
    profit_difference,
    reduced_system,
)
from .integrator import IntegrationConfig, Trajectory, integrate, integrate_layer
from .manifold import (
    Asymptotes,
    FoldPoint,
    ManifoldSample,
    asymptotes,
    find_folds,
    manifold_graph,
    manifold_roots,
    reduced_slow_flow,
)
from .expansion import expand_at_fold, fd_derivative
from .control import (
    ControlledSystem,
    ControllerConfig,
    ControlOutput,
    RobustnessStatus,
    fast_control_shifted,
    fast_control_u,
    hamiltonian_classic,
    hamiltonian_delta,
    hamiltonian_general,
    hamiltonian_perturbed,
    joint_fast_slow,
    lyapunov_value,
    robustness_check,
    target_h,
)
from .sweep import RegionMap, SweepSpec, classify_point, export_region_map, sweep

__version__ = "0.1.0"
