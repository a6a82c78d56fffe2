"""Value functions, characteristic arcs and Riccati flows for Mayer problems
over differential inclusions, with numerical checks of their first- and
second-order sensitivity relations.
"""

from .characteristics import (
    Arc,
    integrate_characteristics,
    integrate_flow_from_initial,
    shoot_terminal_state,
)
from .errors import (
    AsymmetryDrift,
    ContaminatedRegion,
    DegenerateCostate,
    InconclusiveAtResolution,
    MayerSensError,
    ModelInvalid,
    NonsmoothPoint,
    OutOfDomain,
    PremiseFailed,
    PrePostViolation,
    ScenarioError,
)
from .hamiltonian import (
    ControlScenario,
    HamiltonianModel,
    TerminalCost,
    make_affine_control_model,
    make_ball_model,
    make_interval_box_model,
    quadratic_cost,
    validate_model,
)
from .hjb import GridSpec, GridValueFunction, JetCandidate, solve_value_function
from .report import FAIL, INCONCLUSIVE, PASS, VerificationReport
from .riccati import (
    comparison_bound,
    detect_conjugate_time,
    integrate_riccati_direct,
    integrate_variational,
    riccati_from_variational,
)
from .scenario_io import load_scenario, parse_scenario
from .sensitivity import (
    probe_c2_regularity,
    verify_first_order_propagation,
    verify_gradient_relation,
    verify_hessian_propagation,
    verify_subjet_propagation,
    verify_superjet_propagation,
)

__version__ = "0.1.0"
