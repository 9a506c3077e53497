"""Surrogate-guided automatic tuning of switched MPC gains.

The workbench learns a grading cost over closed-loop step-response features
and minimizes it over the positive-(semi)definite MPC weight matrices with a
projected derivative-free random search, demonstrated end to end on a
synthetic four-state air-path twin.
"""

from .features import (FeatureScaler, StepFeatureExtractor, StepResponse,
                       ToleranceConfig, extract_features)
from .harness import (CampaignConfig, DriveSchedule, default_drive_schedule,
                      generate_candidate_trajectories, run_closed_loop,
                      run_tuning_campaign)
from .mpc import GainSet, MpcController, condense, evaluate_cost, mpc_step
from .plant import (ControlInput, OperatingPoint, PlantConfig, PlantState,
                    RegionModel, build_region_grid, discretize,
                    evaluate_dynamics, integrate_step, linearize,
                    select_region, solve_steady_state)
from .qp import QPProblem, QPSolution, solve_qp
from .surrogate import (CostSurrogate, Dataset, LabeledSample, NetworkParams,
                        SurrogateBundle, TrainConfig, forward, grade_to_cost,
                        gradient_check, init_network, split_dataset,
                        synth_label, train)
from .tuner import (DirectionTriple, StepExperimentConfig, TuneTrace,
                    TunerConfig, evaluate_candidate, project_pd, project_psd,
                    random_oracle, random_orthogonal,
                    random_symmetric_direction, tune_region)

__version__ = "0.1.0"
