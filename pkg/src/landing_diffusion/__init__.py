"""Landing-based constrained Langevin diffusion: geometry, samplers,
score training, and desk-scale evaluation tooling."""

from .geometry import (
    ConstraintSet,
    GeometryCache,
    MissingHessian,
    ProjectionFailure,
    active_set,
    stacked_constraints,
    geometry_at,
    landing_direction,
    mean_curvature,
    curvature_H1,
    curvature_H2,
    newton_project,
)
from .dynamics import (
    NoiseSchedule,
    SamplerConfig,
    Trajectory,
    NonFiniteState,
    sigma_at,
    cumulative_S,
    friction_factor,
    forward_step_olla,
    backward_step_olla,
    forward_step_ulla,
    backward_step_ulla,
    forward_step_projected,
    backward_step_projected,
    pseudo_momentum_fwd,
    pseudo_momentum_bwd,
    simulate_forward,
    simulate_forward_ensemble,
    sample_backward,
    decay_oracle,
    dump_trajectory,
    load_trajectory_states,
    trajectory_to_csv,
)
from .score import (
    ScoreNet,
    make_score_net,
    sinusoidal_embedding,
    score_eval,
    score_eval_batch,
    score_grad_params,
    score_grad_params_batch,
    score_grad_input,
    save_score_net,
    load_score_net,
)
from .training import (
    TrainConfig,
    LossReport,
    cwpm_loss_over,
    cwpm_loss_under,
    train,
)
from .zoo import (
    TaskSpec,
    make_sphere,
    make_disk,
    make_sphere_cap,
    make_son,
    prior_uniform,
    prior_momentum,
    prior_empirical_terminal,
    dataset_vmf_mixture,
    dataset_son_mixture,
)
from .metrics import (
    HistogramSpec,
    Histogram,
    EvalReport,
    spherical_spec,
    spherical_histogram,
    coordinate_histogram,
    jsd_histograms,
    violation_stats,
    matrix_power_traces,
    power_trace_stats,
    evaluate_samples,
)
from .config import ConfigError, RunConfig, build_config, load_config
from .pipeline import (FailureBudgetExceeded, run_pipeline, rerun_evaluation,
                       decay_check)

__version__ = "0.1.0"
