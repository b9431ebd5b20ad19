"""Certifiably optimal cardinality-constrained GLMs.

Branch-and-bound with safe Fenchel dual lower bounds from perspective
relaxations, solved by restarted proximal first-order methods with exact
log-linear-time regularizer and prox kernels.
"""

__version__ = "0.1.0"

from .bnb import BnbConfig, Certificate, Incumbent, certify
from .losses import LossEval, loss_conjugate, loss_eval, loss_gradient, loss_value
from .perspective import (PerspectiveContext, dom_check, eval_g, eval_g_conjugate,
                          huber, prox_g, prox_g_conjugate, prox_huber, root_context,
                          top_k_sum)
from .problem import (LossKind, NodeState, ProblemInstance, SyntheticSpec,
                      fix_variable, generate_synthetic, make_node_root,
                      validate_instance)
from .solver import (PrimalDualState, SolveResult, SolverConfig, dual_objective,
                     induced_dual, primal_objective, restart_budget, solve_relaxation)

__all__ = [
    "BnbConfig", "Certificate", "Incumbent", "certify",
    "LossEval", "loss_conjugate", "loss_eval", "loss_gradient", "loss_value",
    "PerspectiveContext", "dom_check", "eval_g", "eval_g_conjugate", "huber",
    "prox_g", "prox_g_conjugate", "prox_huber", "root_context", "top_k_sum",
    "LossKind", "NodeState", "ProblemInstance", "SyntheticSpec", "fix_variable",
    "generate_synthetic", "make_node_root", "validate_instance",
    "PrimalDualState", "SolveResult", "SolverConfig", "dual_objective",
    "induced_dual", "primal_objective", "restart_budget", "solve_relaxation",
    "__version__",
]
