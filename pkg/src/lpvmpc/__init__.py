"""Adaptive LPV-MPC for coupled longitudinal and lateral vehicle control.

Nonlinear bicycle plant, LPV prediction model, condensed MPC with a dense
dual active-set QP solver, GA weight tuning and a small MLP that predicts
tire cornering stiffness online.
"""
from .errors import (ConfigError, DegenerateScheduling, DegenerateTargets, DimensionMismatch,
                     DivergenceDetected, EmptyLog, InfeasibleBounds, LpvMpcError,
                     SingularGeometry)
from .ga import GaConfig, GaResult, GeneticAlgorithm, run_ga, sphere_fitness, tune_weights
from .harness import (ExperimentConfig, Metrics, RunLog, compute_metrics, export_csv,
                      import_csv, load_config, run_closed_loop)
from .lpv import (DiscreteModel, LpvMatrices, SchedulingVector, StiffnessPair, build_lpv,
                  discretize_euler, schedule_horizon)
from .mpc import MpcConfig, MpcSolution, ReferenceWindow, condense, mpc_step
from .nn import (MlpModel, StiffnessDataset, StiffnessRegressor, TrainConfig, generate_dataset,
                 predict_stiffness, train)
from .qp import QpProblem, QpResult, kkt_residual, solve_qp
from .track import (SpeedProfile, TrackSpec, WindProfile, advance_arclength, curvature_at,
                    desk_speed_v1, desk_track_v1, speed_at, wind_at)
from .vehicle import (ControlInput, PacejkaCoeffs, VehicleParams, VehicleState, drag_force,
                      pacejka_force, plant_derivative, slip_angles, step_rk4)

__version__ = "0.1.0"
