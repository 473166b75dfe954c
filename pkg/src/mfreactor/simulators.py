"""Pluggable evaluators: analytic benchmarks, a mock pulsed-flow reactor, and
an external-process adapter.

Every evaluator implements the same contract: called with a design vector, a
fidelity vector, and a seed, it returns an objective value and a positive
observed cost, raising EvaluationFailure when the evaluation cannot produce
a value. All evaluators are deterministic functions of (x, z, seed) and are
safe to call concurrently.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import subprocess
import threading
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .engine import EvalResult, EvaluationFailure
from . import rtd

log = logging.getLogger(__name__)

EVALUATOR_KINDS = ("synthetic-benchmark", "mock-reactor", "external-process")


class ProtocolError(EvaluationFailure):
    """An external harness replied with something other than the wire format."""


def _check_bounds(v: np.ndarray, bounds: np.ndarray, label: str):
    bounds = np.atleast_2d(bounds)
    if v.size != bounds.shape[0]:
        raise ValueError(f"{label} has {v.size} components, expected {bounds.shape[0]}")
    if np.any(v < bounds[:, 0] - 1e-9) or np.any(v > bounds[:, 1] + 1e-9):
        raise ValueError(f"{label} {v.tolist()} outside bounds {bounds.tolist()}")


def _point_entropy(x: np.ndarray, z: np.ndarray) -> int:
    """Stable integer digest of a query point, for per-point noise streams."""
    buf = np.ascontiguousarray(np.concatenate([x, z]), dtype=np.float64).tobytes()
    return zlib.crc32(buf)


def _gauss_bump(U: np.ndarray, center, width) -> np.ndarray:
    d2 = np.sum(((U - np.asarray(center)) / width) ** 2, axis=-1)
    return np.exp(-0.5 * d2)


# ---------------------------------------------------------------------------
# Synthetic multi-fidelity benchmarks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticBenchmark:
    """Closed-form objective with a controllable fidelity bias and cost."""

    name: str
    x_bounds: np.ndarray
    z_bounds: np.ndarray
    f_star: callable          # (k, n) -> (k,) true objective at full fidelity
    bias_field: callable      # (k, n) -> (k,) non-negative bias amplitude
    design_cost: callable     # (k, n) -> (k,) bounded positive factor g(x)
    cost_scale: float = 1.0
    cost_exponents: tuple = (1.0, 1.0)

    def fidelity_level(self, z: np.ndarray) -> np.ndarray:
        lo, hi = self.z_bounds[:, 0], self.z_bounds[:, 1]
        return (np.asarray(z, dtype=float) - lo) / (hi - lo)

    def evaluate(self, x: np.ndarray, z: np.ndarray) -> EvalResult:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        _check_bounds(x, self.x_bounds, "design")
        _check_bounds(z, self.z_bounds, "fidelity")
        s = np.clip(self.fidelity_level(z), 0.0, 1.0)
        y = float(self.f_star(x[None, :])[0]
                  - self.bias_field(x[None, :])[0] * np.prod(1.0 - s))
        rel = np.asarray(z, dtype=float) / self.z_bounds[:, 1]
        cost = float(self.cost_scale * self.design_cost(x[None, :])[0]
                     * np.prod(rel ** np.asarray(self.cost_exponents)))
        return EvalResult(y, cost, {"fidelity_level": s.tolist()})


def _bumps2d() -> SyntheticBenchmark:
    """Funnel landscape: a sharp global bump with a broad halo, a decoy, and
    fine sinusoidal texture that keeps surrogate lengthscales short."""
    def f_star(X):
        X = np.atleast_2d(X)
        texture = np.sin(5.0 * np.pi * X[:, 0]) * np.sin(5.0 * np.pi * X[:, 1])
        return (2.0 * _gauss_bump(X, (0.72, 0.22), 0.11)
                + 0.5 * _gauss_bump(X, (0.72, 0.22), 0.45)
                + 0.9 * _gauss_bump(X, (0.25, 0.75), 0.18)
                + 0.35 * texture)

    # Bias small against the signal so low fidelities stay strongly
    # correlated with the top fidelity and remain informative.
    def bias(X):
        return 0.04 + 0.10 * _gauss_bump(X, (0.35, 0.50), 0.30)

    def g(X):
        return 1.0 + 0.25 * (X[:, 0] + X[:, 1])

    return SyntheticBenchmark(
        "bumps2d",
        np.array([[0.0, 1.0], [0.0, 1.0]]),
        np.array([[0.25, 1.0], [0.25, 1.0]]),
        f_star, bias, g,
    )


BENCHMARKS = {"bumps2d": _bumps2d}


def synthetic_benchmark(x, z, bench: SyntheticBenchmark) -> EvalResult:
    """Evaluate a benchmark; highest fidelity is exact, lower ones are biased."""
    return bench.evaluate(x, z)


# ---------------------------------------------------------------------------
# Mock pulsed-flow helical reactor
# ---------------------------------------------------------------------------

# Unit-box bump landscape behind the mock reactor's true tank count. The
# maximizer sits at a nonzero inversion; the numbers are invented.
_N_TRUE_MAIN = np.array([0.30, 0.62, 0.55, 0.24, 0.35, 0.80])
_N_TRUE_DECOY = np.array([0.75, 0.25, 0.10, 0.70, 0.75, 0.30])

DEFAULT_X_BOUNDS = np.array([
    [7.5, 15.0],    # coil pitch, mm
    [3.0, 12.5],    # coil radius, mm
    [0.0, 1.0],     # inversion fraction
    [1.0, 8.0],     # oscillation amplitude, mm
    [2.0, 8.0],     # oscillation frequency, Hz
    [10.0, 50.0],   # Reynolds number
])
DEFAULT_Z_BOUNDS = np.array([
    [20.0, 60.0],   # axial fidelity (cells along the tube)
    [1.0, 5.0],     # radial fidelity (cross-section refinement level)
])

THETA_STEP = 0.004
TAIL_THRESHOLD = 1e-7
TAIL_RUN = 10


@dataclass(frozen=True)
class MockReactorTruth:
    """Ground truth and cost shape of the mock reactor."""

    x_bounds: np.ndarray = field(default_factory=lambda: DEFAULT_X_BOUNDS.copy())
    z_bounds: np.ndarray = field(default_factory=lambda: DEFAULT_Z_BOUNDS.copy())
    bias_scale: tuple = (1.5, 4.0)      # axial varies less than radial
    cost_base: float = 14.0             # virtual hours at the highest fidelity
    cost_exponents: tuple = (1.5, 1.5)
    duration_coeff: float = 0.004       # virtual hours per second of tracer transit
    noise_std: float = 0.0
    constant_cost: float | None = None

    def unit_design(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.x_bounds[:, 0], self.x_bounds[:, 1]
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def n_true(self, x: np.ndarray) -> float:
        u = self.unit_design(x)
        h = (0.75 * _gauss_bump(u, _N_TRUE_MAIN, 0.32)
             + 0.45 * _gauss_bump(u, _N_TRUE_DECOY, 0.38))
        return float(8.0 + 40.0 * h)

    def bias(self, z_rounded: np.ndarray) -> float:
        lo, hi = self.z_bounds[:, 0], self.z_bounds[:, 1]
        s = np.clip((z_rounded - lo) / (hi - lo), 0.0, 1.0)
        return float(np.sum(np.asarray(self.bias_scale) * (1.0 - s)))

    def mesh_factor(self, z_rounded: np.ndarray) -> float:
        rel = z_rounded / self.z_bounds[:, 1]
        return float(np.prod(rel ** np.asarray(self.cost_exponents)))


def _synth_rtd_curve(n_eff: float, t_mean: float, noise_std: float, rng) -> tuple:
    """Sample the ideal density at n_eff, truncate the tail, add noise."""
    theta = np.arange(THETA_STEP, 30.0, THETA_STEP)
    e = rtd.tanks_in_series_curve(theta, n_eff)
    peak = int(np.argmax(e))
    below = e[peak:] < TAIL_THRESHOLD
    run = 0
    cut = theta.size
    for i, flag in enumerate(below):
        run = run + 1 if flag else 0
        if run >= TAIL_RUN:
            cut = peak + i + 1
            break
    theta, e = theta[:cut], e[:cut]
    if noise_std > 0:
        e = np.maximum(e + rng.normal(0.0, noise_std, size=e.shape), 0.0)
    times = theta * t_mean
    return rtd.RtdCurve(times, e), float(times[-1])


def mock_reactor_evaluate(x, z, truth: MockReactorTruth, seed: int) -> EvalResult:
    """Simulate one reactor run: biased tank count -> outlet curve -> fit.

    Fidelities are rounded to integers, as cell counts would be. The cost is
    a mesh-size factor times a base plus a term proportional to how long the
    tracer takes to clear the outlet, which depends on the design through
    both the flow rate and the sharpness of the distribution.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    _check_bounds(x, truth.x_bounds, "design")
    _check_bounds(z, truth.z_bounds, "fidelity")
    z_round = np.round(z)

    n_true = truth.n_true(x)
    n_eff = max(n_true - truth.bias(z_round), 1.2)
    reynolds = x[5]
    # Mean velocity Re * nu / D with water viscosity 1 mm^2/s, bore 5 mm.
    t_mean = 75.0 / (reynolds / 5.0)

    rng = np.random.default_rng([seed, _point_entropy(x, z), 3])
    curve, t_end = _synth_rtd_curve(n_eff, t_mean, truth.noise_std, rng)
    y = rtd.fit_tanks_in_series(rtd.to_dimensionless(curve))

    if truth.constant_cost is not None:
        cost = truth.constant_cost
    else:
        cost = truth.mesh_factor(z_round) * (truth.cost_base
                                             + truth.duration_coeff * t_end)
    meta = {
        "n_true": n_true,
        "n_effective": n_eff,
        "t_end_s": t_end,
        "z_rounded": z_round.tolist(),
    }
    return EvalResult(float(y), float(cost), meta, curve)


# ---------------------------------------------------------------------------
# External process adapter
# ---------------------------------------------------------------------------


@dataclass
class ExternalProcessSpec:
    """One-shot child process speaking JSON over stdin/stdout."""

    command: list
    timeout_s: float = 60.0
    max_concurrency: int = 4

    def __post_init__(self):
        if not self.command:
            raise ValueError("external-process evaluator needs a command")
        self._semaphore = threading.Semaphore(self.max_concurrency)


def external_process_evaluate(x, z, spec: ExternalProcessSpec, seed: int) -> EvalResult:
    """Spawn the harness, send one JSON request, read one JSON response.

    Wall-clock time is the fallback cost when the response does not report
    cost_seconds. Timeouts and nonzero exits surface as evaluation failures;
    responses that do not parse as the wire format are protocol errors.
    """
    request = json.dumps({
        "design": list(map(float, np.atleast_1d(x))),
        "fidelity": list(map(float, np.atleast_1d(z))),
        "seed": int(seed),
    })
    start = time.monotonic()
    try:
        with spec._semaphore:
            proc = subprocess.run(
                spec.command, input=request.encode("utf-8"),
                capture_output=True, timeout=spec.timeout_s,
            )
    except subprocess.TimeoutExpired:
        elapsed = time.monotonic() - start
        raise EvaluationFailure(f"harness timed out after {spec.timeout_s}s", cost=elapsed)
    except OSError as exc:
        raise EvaluationFailure(f"could not spawn harness: {exc}", cost=0.0)
    elapsed = max(time.monotonic() - start, 1e-9)

    if proc.returncode != 0:
        raise EvaluationFailure(
            f"harness exited with {proc.returncode}: "
            f"{proc.stderr.decode('utf-8', 'replace')[:500]}",
            cost=elapsed,
        )
    text = proc.stdout.decode("utf-8", "replace")
    try:
        response = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable harness response ({exc}): {text[:500]!r}",
                            cost=elapsed)
    if not isinstance(response, dict):
        raise ProtocolError(f"harness response is not an object: {text[:500]!r}",
                            cost=elapsed)
    if "error" in response:
        raise EvaluationFailure(f"harness reported: {response['error']}", cost=elapsed)
    if "objective" not in response:
        raise ProtocolError(f"harness response missing 'objective': {text[:500]!r}",
                            cost=elapsed)
    cost = float(response.get("cost_seconds", elapsed))
    return EvalResult(float(response["objective"]), max(cost, 1e-9),
                      {"elapsed_s": elapsed})


# ---------------------------------------------------------------------------
# Config-driven construction and fault injection
# ---------------------------------------------------------------------------


def with_fault_injection(evaluator, failure_rate: float):
    """Fail a deterministic fraction of calls, charging a partial cost."""
    if not 0.0 <= failure_rate < 1.0:
        raise ValueError("failure_rate must lie in [0, 1)")
    if failure_rate == 0.0:
        return evaluator

    def wrapped(x, z, seed):
        rng = np.random.default_rng([seed, _point_entropy(np.atleast_1d(x),
                                                          np.atleast_1d(z)), 77])
        fail = rng.uniform() < failure_rate
        fraction = rng.uniform(0.1, 0.9)
        result = evaluator(x, z, seed)
        if fail:
            raise EvaluationFailure("injected fault", cost=fraction * result.cost)
        return result

    return wrapped


def make_evaluator(spec: dict):
    """Build an evaluator from a config mapping; validates per kind."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    failure_rate = float(spec.pop("failure_rate", 0.0))
    if kind not in EVALUATOR_KINDS:
        raise ValueError(f"unknown evaluator kind {kind!r}; expected one of {EVALUATOR_KINDS}")

    if kind == "synthetic-benchmark":
        name = spec.pop("name", "bumps2d")
        if name not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {name!r}; have {sorted(BENCHMARKS)}")
        bench = BENCHMARKS[name]()
        overrides = {}
        if "cost_scale" in spec:
            overrides["cost_scale"] = float(spec.pop("cost_scale"))
        if "cost_exponents" in spec:
            overrides["cost_exponents"] = tuple(float(v) for v in spec.pop("cost_exponents"))
        if overrides:
            bench = dataclasses.replace(bench, **overrides)
        if spec:
            raise ValueError(f"unknown synthetic-benchmark parameters: {sorted(spec)}")
        evaluator = lambda x, z, seed: bench.evaluate(x, z)
        evaluator.benchmark = bench

    elif kind == "mock-reactor":
        allowed = {"bias_scale", "cost_base", "cost_exponents", "duration_coeff",
                   "noise_std", "constant_cost", "x_bounds", "z_bounds"}
        unknown = set(spec) - allowed
        if unknown:
            raise ValueError(f"unknown mock-reactor parameters: {sorted(unknown)}")
        kwargs = {}
        for key in allowed & set(spec):
            value = spec[key]
            if key in ("x_bounds", "z_bounds"):
                value = np.asarray(value, dtype=float)
            elif key in ("bias_scale", "cost_exponents"):
                value = tuple(float(v) for v in value)
            elif value is not None:
                value = float(value)
            kwargs[key] = value
        truth = MockReactorTruth(**kwargs)
        evaluator = lambda x, z, seed: mock_reactor_evaluate(x, z, truth, seed)
        evaluator.truth = truth

    else:
        command = spec.pop("command", None)
        if not isinstance(command, list) or not all(isinstance(c, str) for c in command):
            raise ValueError("external-process evaluator needs 'command': [str, ...]")
        eps = ExternalProcessSpec(
            command,
            timeout_s=float(spec.pop("timeout_s", 60.0)),
            max_concurrency=int(spec.pop("max_concurrency", 4)),
        )
        if spec:
            raise ValueError(f"unknown external-process parameters: {sorted(spec)}")
        evaluator = lambda x, z, seed: external_process_evaluate(x, z, eps, seed)
        evaluator.process_spec = eps

    wrapped = with_fault_injection(evaluator, failure_rate)
    for attr in ("benchmark", "truth", "process_spec"):
        if hasattr(evaluator, attr):
            setattr(wrapped, attr, getattr(evaluator, attr))
    return wrapped
