"""Joint user association and bandwidth/power allocation for cellular HetNets.

Layers, bottom up:

* :mod:`hetnetopt.problem` / :mod:`hetnetopt.capacity` -- the generic
  flow-and-interference utility maximization program,
* :mod:`hetnetopt.dual` -- separable dual decomposition: dual bounds and
  augmented Lagrangian solves,
* :mod:`hetnetopt.cellular` -- mapping of cellular scenarios (flows,
  bandwidth, interference, SINR) onto the generic program,
* :mod:`hetnetopt.hetnet` -- randomized two-tier macro/pico drops on a
  hexagonal wraparound layout,
* :mod:`hetnetopt.association` -- single-serving-cell assignment methods,
* :mod:`hetnetopt.experiment` / :mod:`hetnetopt.cli` -- experiment
  orchestration, metrics and the ``simulate`` command.
"""

from .capacity import (
    CallableCapacity,
    ConstantCapacity,
    FixedEfficiencyCapacity,
    LinkCapacityModel,
    SinrCapacity,
    SpectralEfficiencyModel,
    TabulatedCapacity,
)
from .dual import (
    DualPoint,
    ProxSpec,
    SolveReport,
    SolverSettings,
    augmented_lagrangian_solve,
    dual_value,
    lagrangian,
    maximize_link_component,
    maximize_rate_component,
    minimize_dual_bound,
    recover_feasible,
)
from .problem import (
    Bounds,
    DecisionPoint,
    FlowGraph,
    InterferenceMap,
    NetworkConstraints,
    ProblemInstance,
    ResourceConstraints,
    UtilitySpec,
    build_incidence,
    evaluate_constraints,
    evaluate_utility,
    instance_from_dict,
    instance_to_dict,
    is_feasible,
)

__version__ = "0.1.0"
