"""Data-driven inversion-based control toolkit.

Identify a polynomial NARX predictor from plant data, build the parallel
nonlinear-inversion + tuned-PID controller, simulate the closed loop, and
certify finite-gain stability empirically from sampled constants.
"""

from .dataset import (
    DataSet,
    ExcitationSpec,
    NormConstants,
    compute_norm_constants,
    generate_excitation,
    load_csv,
    save_csv,
)
from .invctrl import InversionConfig, InversionResult, objective_j, predicted_error, solve_inversion
from .linctrl import (
    PidGains,
    PidState,
    ReferenceModel,
    initial_pid_state,
    load_gains,
    pid_step,
    save_gains,
    simulate_reference_model,
    virtual_reference,
    vrft_fit,
)
from .simloop import (
    PLANT_REGISTRY,
    PlantSpec,
    ReferenceSpec,
    SimConfig,
    SimulationTrace,
    collect_open_loop,
    get_plant,
    load_trace,
    plant_step,
    run_closed_loop,
    saturate,
    save_trace,
)
from .stability import (
    AssumptionReport,
    BoundCheck,
    CertifySpec,
    OperatingPointSampler,
    StabilityCertificate,
    StabilityConstants,
    certify,
    check_assumptions,
    check_error_recursion,
    check_finite_gain,
    compute_error_bound,
    estimate_delta_bar,
    estimate_gamma_xi,
    estimate_gamma_y,
    estimate_inversion_constants,
    fit_inversion_constants,
    load_certificate,
    recompute_derived,
    save_certificate,
    verify_tracking_bound,
)
from .sysid import (
    PolyBasis,
    PolyModel,
    RegressorWindow,
    enumerate_monomials,
    eval_basis,
    fit_model,
    load_model,
    predict,
    save_model,
)

__version__ = "0.1.0"
