"""Global sensor network localization through a canonical-duality potential game."""

from .canonical import (
    CanonicalImage,
    DualState,
    canonical_image,
    compute_W,
    dual_from_primal,
    gamma,
    gamma_gradients,
    hessian_P,
    in_E_plus,
    payoff,
    potential,
    psi_and_conjugate,
)
from .central import CentralState, project_box, run_alg1, step_alg1
from .distributed import (
    LocalLayout,
    dsdeg_iteration,
    estimate_lipschitz,
    local_gamma,
    pseudo_gradient_F,
    pseudo_gradient_Fprime_and_u,
    run_dsdeg,
)
from .network import (
    InstanceError,
    NetworkInstance,
    RigidityReport,
    apply_noise,
    build_instance,
    generate_instance,
    load_instance,
    rigidity_rank,
    save_instance,
)
from .report import RunReport, SolverConfig
from .verify import (
    NeCertificate,
    baseline_projected_gradient,
    constraint_residual,
    duality_residual,
    mle,
    rate_check,
    verify_ne,
)

__version__ = "0.1.0"
