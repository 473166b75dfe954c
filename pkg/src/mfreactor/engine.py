"""Budget-aware multi-fidelity Bayesian optimization loop.

The campaign starts from a Latin hypercube design over the joint
design/fidelity box, then iterates: refit objective and cost surrogates on
the data gathered so far, maximize the cost-adjusted acquisition to propose
the next evaluation, solve the greedy highest-fidelity problem, and compare
the remaining budget against a confidence upper bound on the cost of doing
both. While the budget covers both, the proposed point is evaluated;
otherwise the greedy point is evaluated at the highest fidelity as the
campaign's final record.

Costs are modeled on the log scale, so the cost surrogate's upper bound is
a log-normal quantile and its positive-scale predictions are exponentials.
All randomness is derived from the campaign seed and the record index, which
makes traces reproducible and crash-resume exact.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import acquisition as acq
from . import gp
from .rtd import RtdCurve

log = logging.getLogger(__name__)

PROVENANCE_DOE = "doe"
PROVENANCE_ACQUISITION = "acquisition"
PROVENANCE_GREEDY = "greedy"

TERMINATION_STOPPING_RULE = "budget-stopping-rule"
TERMINATION_FAILURE_LIMIT = "evaluator-failure-limit"


class EvalResult(NamedTuple):
    """What an evaluator returns: objective value, observed cost, extras."""

    y: float
    cost: float
    meta: dict = {}
    curve: RtdCurve | None = None


class EvaluationFailure(RuntimeError):
    """A single evaluation failed; cost already spent is still owed."""

    def __init__(self, message: str, cost: float = 0.0):
        super().__init__(message)
        self.cost = float(cost)


Evaluator = Callable[[np.ndarray, np.ndarray, int], EvalResult]


def derive_seed(*parts: int) -> int:
    """Stable scalar seed from integer components."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# Stream tags for seed derivation; one per independent random consumer.
_STREAM_DOE = 0
_STREAM_EVAL = 1
_STREAM_GP_OBJECTIVE = 2
_STREAM_GP_COST = 3
_STREAM_ACQ = 4
_STREAM_GREEDY = 5


@dataclass
class Evaluation:
    """One campaign record: where, at what fidelity, what came back."""

    index: int
    provenance: str
    x: tuple
    z: tuple
    y: float | None
    cost: float
    ok: bool
    t_cum: float
    meta: dict = field(default_factory=dict)
    curve: RtdCurve | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "provenance": self.provenance,
            "x": list(self.x),
            "z": list(self.z),
            "y": self.y,
            "cost": self.cost,
            "ok": self.ok,
            "t_cum": self.t_cum,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Evaluation":
        return cls(d["index"], d["provenance"], tuple(d["x"]), tuple(d["z"]),
                   d["y"], d["cost"], d["ok"], d["t_cum"], dict(d.get("meta", {})))


@dataclass
class Dataset:
    """Ordered evaluation records over fixed design/fidelity dimensions."""

    n_design: int
    n_fidelity: int
    records: list = field(default_factory=list)

    def append(self, record: Evaluation):
        if len(record.x) != self.n_design or len(record.z) != self.n_fidelity:
            raise ValueError("record dimensions do not match the dataset")
        if self.records and record.t_cum < self.records[-1].t_cum:
            raise ValueError("record timestamps must be monotone")
        self.records.append(record)

    def successful(self) -> list:
        return [r for r in self.records if r.ok]

    def training_arrays(self):
        """(joint inputs, objective targets, log-cost targets) of successful records."""
        good = self.successful()
        XZ = np.array([list(r.x) + list(r.z) for r in good], dtype=float)
        y = np.array([r.y for r in good], dtype=float)
        log_c = np.log(np.array([r.cost for r in good], dtype=float))
        return XZ, y, log_c

    def count(self, provenance: str) -> int:
        return sum(1 for r in self.records if r.provenance == provenance)


@dataclass
class BudgetState:
    total: float
    spent: float = 0.0

    @property
    def remaining(self) -> float:
        return self.total - self.spent

    def debit(self, cost: float):
        self.spent += cost


@dataclass
class SurrogatePair:
    objective: gp.GpModel
    cost: gp.GpModel


@dataclass(frozen=True)
class EngineConfig:
    """Everything the loop needs besides the evaluator itself."""

    x_bounds: np.ndarray                 # (n, 2)
    z_bounds: np.ndarray                 # (m, 2)
    budget_total: float
    doe_count: int = 25
    beta: float = 2.5
    gamma: float = 1.5
    p_lambda: float = 2.0
    discount_floor: float = 1e-2
    include_doe_cost: bool = False
    cost_adjust: bool = True
    fidelity_smoothness: float = 3.0
    cost_nugget_floor: float = 2e-3
    gp_restarts: int = 3
    acq_restarts: int = 8
    acq_local_steps: int = 48
    max_consecutive_failures: int = 3
    doe_concurrency: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x_bounds", np.atleast_2d(np.asarray(self.x_bounds, dtype=float)))
        object.__setattr__(self, "z_bounds", np.atleast_2d(np.asarray(self.z_bounds, dtype=float)))
        if self.budget_total <= 0:
            raise ValueError("budget_total must be positive")
        if self.doe_count < 2:
            raise ValueError("doe_count must be at least 2")
        if self.p_lambda < 0:
            raise ValueError("p_lambda must be non-negative")

    @property
    def z_star(self) -> np.ndarray:
        return self.z_bounds[:, 1].copy()

    @property
    def joint_bounds(self) -> np.ndarray:
        return np.vstack([self.x_bounds, self.z_bounds])

    def acquisition_config(self, seed) -> acq.AcquisitionConfig:
        return acq.AcquisitionConfig(
            beta=self.beta, gamma=self.gamma, discount_floor=self.discount_floor,
            restarts=self.acq_restarts, local_steps=self.acq_local_steps, seed=seed,
        )


@dataclass
class CampaignResult:
    x_star: tuple | None
    y_star: float | None
    z_star: tuple | None
    trace: Dataset
    termination_reason: str
    budget: BudgetState

    def to_dict(self) -> dict:
        return {
            "x_star": list(self.x_star) if self.x_star is not None else None,
            "y_star": self.y_star,
            "z_star": list(self.z_star) if self.z_star is not None else None,
            "termination_reason": self.termination_reason,
            "budget_total": self.budget.total,
            "budget_spent": self.budget.spent,
            "n_evaluations": len(self.trace.records),
        }


@dataclass
class StepOutcome:
    finished: bool
    record: Evaluation | None
    result: CampaignResult | None = None


@dataclass
class CampaignState:
    config: EngineConfig
    evaluator: Evaluator
    dataset: Dataset
    budget: BudgetState
    consecutive_failures: int = 0
    on_record: Callable[[Evaluation, "CampaignState"], None] | None = None
    result: CampaignResult | None = None

    @property
    def next_index(self) -> int:
        return len(self.dataset.records)

    @property
    def iteration(self) -> int:
        """Number of optimization steps taken so far (failed ones included)."""
        return len(self.dataset.records) - self.dataset.count(PROVENANCE_DOE)


def latin_hypercube(count: int, bounds: np.ndarray, seed) -> np.ndarray:
    """Stratified sample: each 1-D projection has one point per bin."""
    if count < 1:
        raise ValueError("count must be at least 1")
    return acq.lhs_box(count, bounds, np.random.default_rng(seed))


def refit_surrogates(dataset: Dataset, config: EngineConfig, iteration: int) -> SurrogatePair:
    """Refit objective and log-cost GPs with fresh normalization statistics.

    The fidelity dimensions' lengthscales are floored at a multiple of the
    configured fidelity span (in normalized units), encoding the smooth
    fidelity influence the joint-space model relies on. Without the floor,
    data concentrated at one fidelity leave those lengthscales unidentified
    and the fitted cross-fidelity correlation collapses, cutting off the
    information flow from cheap evaluations to the top fidelity.
    """
    XZ, y, log_c = dataset.training_arrays()
    if XZ.shape[0] < 2:
        raise ValueError("need at least 2 successful records to fit surrogates")
    norm_f = gp.NormStats.from_data(XZ, y)
    n = config.x_bounds.shape[0]
    z_span = config.z_bounds[:, 1] - config.z_bounds[:, 0]
    floors = np.concatenate([
        np.full(n, gp.LENGTHSCALE_BOUNDS[0]),
        config.fidelity_smoothness * z_span / norm_f.input_std[n:],
    ])
    f_model = gp.fit_hyperparameters(
        XZ, y, restarts=config.gp_restarts, normalization=norm_f,
        seed=[config.seed, _STREAM_GP_OBJECTIVE, iteration],
        lengthscale_floors=floors,
    )
    # The cost model's lengthscales are left unfloored: its steep trend
    # across fidelity would be flattened by forced smoothness, and the
    # stopping rule's mu + p_lambda * sigma bound supplies conservatism
    # where the cost surface is unexplored. Its nugget gets a floor instead:
    # observed costs carry irreducible scatter (discrete mesh sizes, timer
    # noise) that exact-repeat records would otherwise argue away.
    c_model = gp.fit_hyperparameters(
        XZ, log_c, restarts=config.gp_restarts,
        seed=[config.seed, _STREAM_GP_COST, iteration],
        nugget_floor=config.cost_nugget_floor,
    )
    return SurrogatePair(f_model, c_model)


def predict_cost_upper(cost_model: gp.GpModel, x, z, p_lambda: float) -> float:
    """Log-normal upper bound exp(mu_log + p_lambda * sigma_log) in cost units."""
    xz = np.concatenate([np.atleast_1d(x), np.atleast_1d(z)])
    mean, std = gp.predict(cost_model, xz)
    return float(np.exp(mean + p_lambda * std))


def c_max(cost_model, x_next, z_next, x_greedy, z_star, p_lambda: float) -> float:
    """Upper bound on the cost of one more standard plus one greedy evaluation."""
    return predict_cost_upper(cost_model, x_next, z_next, p_lambda) + predict_cost_upper(
        cost_model, x_greedy, z_star, p_lambda
    )


def _record_evaluation(state: CampaignState, x, z, provenance: str, meta: dict) -> Evaluation:
    """Run the evaluator once and append the outcome (success or failure)."""
    index = state.next_index
    seed = derive_seed(state.config.seed, _STREAM_EVAL, index)
    t_prev = state.dataset.records[-1].t_cum if state.dataset.records else 0.0
    try:
        out = state.evaluator(np.asarray(x, dtype=float), np.asarray(z, dtype=float), seed)
        record = Evaluation(
            index, provenance, tuple(float(v) for v in x), tuple(float(v) for v in z),
            float(out.y), float(out.cost), True, t_prev + float(out.cost),
            {**meta, **out.meta}, out.curve,
        )
        state.consecutive_failures = 0
    except EvaluationFailure as failure:
        log.warning("evaluation %d failed: %s", index, failure)
        record = Evaluation(
            index, provenance, tuple(float(v) for v in x), tuple(float(v) for v in z),
            None, failure.cost, False, t_prev + failure.cost,
            {**meta, "error": str(failure)}, None,
        )
        state.consecutive_failures += 1
    if provenance != PROVENANCE_DOE or state.config.include_doe_cost:
        state.budget.debit(record.cost)
    record.meta["remaining_after"] = state.budget.remaining
    state.dataset.append(record)
    if state.on_record is not None:
        state.on_record(record, state)
    return record


def _failure_limit_result(state: CampaignState) -> CampaignResult:
    """Salvage the best available record when the evaluator keeps failing."""
    z_star = tuple(state.config.z_star)
    candidates = [r for r in state.dataset.successful() if tuple(r.z) == z_star]
    if not candidates:
        candidates = state.dataset.successful()
    best = max(candidates, key=lambda r: r.y) if candidates else None
    return CampaignResult(
        best.x if best else None, best.y if best else None, best.z if best else None,
        state.dataset, TERMINATION_FAILURE_LIMIT, state.budget,
    )


def initialize(config: EngineConfig, evaluator: Evaluator, on_record=None) -> CampaignState:
    """Evaluate the design-of-experiments sample and assemble campaign state."""
    state = CampaignState(
        config, evaluator,
        Dataset(config.x_bounds.shape[0], config.z_bounds.shape[0]),
        BudgetState(config.budget_total), on_record=on_record,
    )
    resume_doe(state)
    return state


def resume_doe(state: CampaignState):
    """Evaluate whatever part of the DoE is not in the dataset yet."""
    config = state.config
    points = latin_hypercube(config.doe_count, config.joint_bounds,
                             [config.seed, _STREAM_DOE])
    n_design = config.x_bounds.shape[0]
    done = state.dataset.count(PROVENANCE_DOE)
    todo = list(range(done, config.doe_count))
    if not todo:
        return

    if config.doe_concurrency > 1:
        # Evaluators are reentrant; results are recorded in index order so
        # concurrency does not change the trace.
        first = state.next_index
        seeds = [derive_seed(config.seed, _STREAM_EVAL, first + k) for k in range(len(todo))]

        def call(k):
            i = todo[k]
            try:
                return state.evaluator(points[i, :n_design], points[i, n_design:], seeds[k])
            except EvaluationFailure as failure:
                return failure

        with ThreadPoolExecutor(max_workers=config.doe_concurrency) as pool:
            outcomes = list(pool.map(call, range(len(todo))))
        for i, outcome in zip(todo, outcomes):
            _record_prepared(state, points[i, :n_design], points[i, n_design:], outcome)
            if state.consecutive_failures >= config.max_consecutive_failures:
                break
    else:
        for i in todo:
            _record_evaluation(state, points[i, :n_design], points[i, n_design:],
                               PROVENANCE_DOE, {})
            if state.consecutive_failures >= config.max_consecutive_failures:
                break


def _record_prepared(state: CampaignState, x, z, outcome):
    """Append a pre-computed DoE outcome, mirroring _record_evaluation."""
    index = state.next_index
    t_prev = state.dataset.records[-1].t_cum if state.dataset.records else 0.0
    if isinstance(outcome, EvaluationFailure):
        record = Evaluation(index, PROVENANCE_DOE, tuple(map(float, x)), tuple(map(float, z)),
                            None, outcome.cost, False, t_prev + outcome.cost,
                            {"error": str(outcome)}, None)
        state.consecutive_failures += 1
    else:
        record = Evaluation(index, PROVENANCE_DOE, tuple(map(float, x)), tuple(map(float, z)),
                            float(outcome.y), float(outcome.cost), True,
                            t_prev + float(outcome.cost), dict(outcome.meta), outcome.curve)
        state.consecutive_failures = 0
    if state.config.include_doe_cost:
        state.budget.debit(record.cost)
    record.meta["remaining_after"] = state.budget.remaining
    state.dataset.append(record)
    if state.on_record is not None:
        state.on_record(record, state)


def step(state: CampaignState) -> StepOutcome:
    """One loop iteration: refit, propose, check the budget, evaluate."""
    config = state.config
    iteration = state.iteration
    surrogates = refit_surrogates(state.dataset, config, iteration)
    z_star = config.z_star

    acq_cfg = config.acquisition_config(seed=[config.seed, _STREAM_ACQ, iteration])
    if config.cost_adjust:
        def objective(XZ):
            return acq.cost_adjusted_ucb_batch(
                surrogates.objective, surrogates.cost, XZ, z_star, acq_cfg
            )
    else:
        def objective(XZ):
            return acq.ucb_batch(surrogates.objective, XZ, acq_cfg.beta)

    xz_next, acq_value = acq.maximize_acquisition(objective, config.joint_bounds, acq_cfg)
    n = config.x_bounds.shape[0]
    x_next, z_next = xz_next[:n], xz_next[n:]

    greedy_cfg = config.acquisition_config(seed=[config.seed, _STREAM_GREEDY, iteration])
    x_greedy = acq.greedy_highest_fidelity(surrogates.objective, config.x_bounds,
                                           z_star, greedy_cfg)

    c_next = predict_cost_upper(surrogates.cost, x_next, z_next, config.p_lambda)
    c_greedy = predict_cost_upper(surrogates.cost, x_greedy, z_star, config.p_lambda)
    bound = c_next + c_greedy
    meta = {
        "iteration": iteration,
        "acq_value": float(acq_value),
        "c_next_upper": float(c_next),
        "c_greedy_upper": float(c_greedy),
        "c_max": float(bound),
        "remaining_before": state.budget.remaining,
    }

    if state.budget.remaining > bound:
        record = _record_evaluation(state, x_next, z_next, PROVENANCE_ACQUISITION, meta)
        if state.consecutive_failures >= config.max_consecutive_failures:
            state.result = _failure_limit_result(state)
            return StepOutcome(True, record, state.result)
        return StepOutcome(False, record)

    record = _record_evaluation(state, x_greedy, z_star, PROVENANCE_GREEDY, meta)
    if record.ok:
        state.result = CampaignResult(record.x, record.y, record.z, state.dataset,
                                      TERMINATION_STOPPING_RULE, state.budget)
        return StepOutcome(True, record, state.result)
    if state.consecutive_failures >= config.max_consecutive_failures:
        state.result = _failure_limit_result(state)
        return StepOutcome(True, record, state.result)
    # The greedy attempt failed; keep looping so it can be retried with a
    # fresh evaluation seed.
    return StepOutcome(False, record)


def run(
    config: EngineConfig,
    evaluator: Evaluator,
    seed: int | None = None,
    on_record=None,
    state: CampaignState | None = None,
) -> CampaignResult:
    """Run a whole campaign; ``state`` may be a checkpointed one to resume."""
    if seed is not None:
        config = replace(config, seed=seed)
    if state is None:
        state = initialize(config, evaluator, on_record)
    else:
        resume_doe(state)
    if state.result is not None:
        return state.result
    if state.consecutive_failures >= config.max_consecutive_failures:
        state.result = _failure_limit_result(state)
        return state.result
    while True:
        outcome = step(state)
        if outcome.finished:
            return outcome.result
