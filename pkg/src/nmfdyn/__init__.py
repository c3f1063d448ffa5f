"""Neural mean-field dynamics for diffusion networks.

Simulation of continuous-time independent cascades, exact small-network
oracles, a learned mean-field ODE with memory trained by the adjoint method,
influence estimation, network inference metrics and influence maximization.
"""
from .cascades import Cascade, CascadeSet, EdgeLaws, ProbCurve, build_dataset, simulate_cascade
from .dynamics import ThetaParams, g_dynamics
from .evaluation import estimate_probs, influence, mae_metrics, network_metrics
from .infmax import InfMaxConfig, pgd_infmax, project_capped_simplex
from .model import TrainedModel, load_model, save_model
from .network import DiffusionNetwork, KroneckerSpec, generate_kronecker
from .ode import DivergenceError, IntegratorConfig
from .oracles import exact_probs_ctmc, full_z_ode_oracle
from .training import TrainConfig, grad_loss_adjoint, loss_forward, train

__version__ = "0.1.0"
