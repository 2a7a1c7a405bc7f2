"""Learning high-level decision variables for a gate-traversal MPC."""

from ._core import BACKEND
from ._version import __version__
from .dynamics import (GRAVITY, GateState, PendulumParams, QuadState,
                       gate_pose, integrate_pendulum, integrate_quad,
                       predict_gate_trajectory)
from .trajopt import (DecisionVars, InputBounds, MpcConfig, MpcController,
                      SolverParams, TrajOptError)
from .policy_search import (GaussianPolicy, LinearGaussianPolicy, RffSpec,
                            train_gaussian, train_linear_gaussian)
from .neural_policy import (Dataset, MlpParams, NeuralHighMpcPolicy,
                            collect_dataset, train_mlp)
from .baselines import MinJerkController, StandardMpcController
from .harness import (HighMpcController, Scenario, eval_linear_policy,
                      planning_scenario, run_episode, single_gate_scenario,
                      sweep, sweep_scenario, train_planning_gaussian,
                      train_planning_linear)

__all__ = [
    "BACKEND", "GRAVITY", "GateState", "PendulumParams", "QuadState",
    "gate_pose", "integrate_pendulum", "integrate_quad",
    "predict_gate_trajectory", "DecisionVars", "InputBounds", "MpcConfig",
    "MpcController", "SolverParams", "TrajOptError", "GaussianPolicy",
    "LinearGaussianPolicy", "RffSpec", "train_gaussian",
    "train_linear_gaussian", "Dataset", "MlpParams", "NeuralHighMpcPolicy",
    "collect_dataset", "train_mlp", "MinJerkController",
    "StandardMpcController", "HighMpcController", "Scenario",
    "eval_linear_policy", "planning_scenario", "run_episode",
    "single_gate_scenario", "sweep", "sweep_scenario",
    "train_planning_gaussian", "train_planning_linear", "__version__",
]
