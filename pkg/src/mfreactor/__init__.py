"""Multi-fidelity Bayesian optimization for simulated pulsed-flow tube reactors."""

from .acquisition import (
    AcquisitionConfig,
    cost_adjusted_ucb,
    greedy_highest_fidelity,
    maximize_acquisition,
    ucb,
)
from .engine import (
    BudgetState,
    CampaignResult,
    Dataset,
    EngineConfig,
    EvalResult,
    Evaluation,
    EvaluationFailure,
    SurrogatePair,
    c_max,
    latin_hypercube,
    predict_cost_upper,
    refit_surrogates,
    run,
    step,
)
from .gp import (
    GpModel,
    KernelSpec,
    NormStats,
    correlation,
    fit_hyperparameters,
    kernel_eval,
    log_marginal_likelihood,
    posterior,
)
from .geometry import CenterlinePath, CoilParams, OscillationParams, arc_length, coil_path, export_path, oscillatory_velocity
from .rtd import (
    DimensionlessRtd,
    RtdCurve,
    fit_tanks_in_series,
    tanks_in_series_curve,
    to_dimensionless,
)
from .simulators import (
    MockReactorTruth,
    SyntheticBenchmark,
    external_process_evaluate,
    make_evaluator,
    mock_reactor_evaluate,
    synthetic_benchmark,
)

__version__ = "0.1.0"
