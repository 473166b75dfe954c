"""Gaussian process regression over the joint design/fidelity space.

Models are trained on jointly normalized inputs (zero mean, unit standard
deviation per dimension, with a floor for constant columns) and normalized
targets. Prediction is Cholesky-based; hyperparameters are selected by
maximizing the log marginal likelihood with multi-start L-BFGS-B on the log
of the parameters, using analytic gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

log = logging.getLogger(__name__)

KERNEL_FAMILIES = ("squared-exponential", "matern-5/2")

# Jitter fractions of signal variance tried, in order, when the covariance
# matrix fails to factorize with the nominal nugget.
JITTER_LADDER = (1e-8, 1e-6, 1e-4)

# Hyperparameter box, in normalized input/target units.
LENGTHSCALE_BOUNDS = (1e-2, 1e2)
SIGNAL_VARIANCE_BOUNDS = (1e-3, 1e3)
NUGGET_BOUNDS = (1e-8, 1e-1)

STD_FLOOR = 1e-8

_SQRT5 = np.sqrt(5.0)


class GpNumericalError(RuntimeError):
    """Covariance factorization failed even after jitter escalation."""


class DimensionMismatchError(ValueError):
    """Points do not match the kernel's lengthscale dimension."""


@dataclass(frozen=True)
class KernelSpec:
    """Stationary ARD kernel over the concatenated (design, fidelity) vector."""

    family: str
    lengthscales: np.ndarray
    signal_variance: float
    nugget: float

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        ls = np.asarray(self.lengthscales, dtype=float)
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-D array")
        if not (np.all(ls > 0) and self.signal_variance > 0 and self.nugget > 0):
            raise ValueError("kernel hyperparameters must be strictly positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class NormStats:
    """Per-dimension input and scalar target normalization statistics."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: float
    target_std: float

    @classmethod
    def from_data(cls, inputs: np.ndarray, targets: np.ndarray) -> "NormStats":
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        targets = np.asarray(targets, dtype=float)
        in_std = np.maximum(inputs.std(axis=0), STD_FLOOR)
        t_std = max(float(targets.std()), STD_FLOOR)
        return cls(inputs.mean(axis=0), in_std, float(targets.mean()), t_std)

    def normalize_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return (np.asarray(inputs, dtype=float) - self.input_mean) / self.input_std

    def denormalize_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return np.asarray(inputs, dtype=float) * self.input_std + self.input_mean

    def normalize_targets(self, targets):
        return (np.asarray(targets, dtype=float) - self.target_mean) / self.target_std

    def denormalize_mean(self, mean):
        return np.asarray(mean, dtype=float) * self.target_std + self.target_mean

    def denormalize_std(self, std):
        return np.asarray(std, dtype=float) * self.target_std


@dataclass
class GpModel:
    """A trained GP: kernel, normalized training set and its factorization."""

    kernel: KernelSpec
    train_inputs: np.ndarray      # normalized, (n, d)
    train_targets: np.ndarray     # normalized, (n,)
    normalization: NormStats
    cholesky_factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    raw_inputs: np.ndarray = field(repr=False)
    raw_targets: np.ndarray = field(repr=False)
    jitter_used: float = 0.0


def _cross_sq_dists(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared lengthscale-weighted distances between row sets A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != spec.dim or B.shape[1] != spec.dim:
        raise DimensionMismatchError(
            f"points have dimension {A.shape[1]}/{B.shape[1]}, kernel has {spec.dim}"
        )
    A = A / spec.lengthscales
    B = B / spec.lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.maximum(sq, 0.0)


def _corr_from_sq(family: str, sq: np.ndarray) -> np.ndarray:
    if family == "squared-exponential":
        return np.exp(-0.5 * sq)
    r = np.sqrt(sq)
    return (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-_SQRT5 * r)


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Covariance matrix between two point sets (normalized coordinates)."""
    sq = _cross_sq_dists(spec, A, A if B is None else B)
    return spec.signal_variance * _corr_from_sq(spec.family, sq)


def kernel_eval(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Covariance between two points; equals signal_variance at zero distance."""
    return float(kernel_matrix(spec, np.atleast_2d(a), np.atleast_2d(b))[0, 0])


def _factorize(spec: KernelSpec, Xn: np.ndarray, yn: np.ndarray):
    """Cholesky of K + nugget*I, escalating through the jitter ladder."""
    K = kernel_matrix(spec, Xn)
    n = K.shape[0]
    attempted = []
    for jitter in (0.0,) + tuple(JITTER_LADDER):
        bump = jitter * spec.signal_variance
        attempted.append(bump)
        try:
            L = cholesky(K + (spec.nugget + bump) * np.eye(n), lower=True)
        except np.linalg.LinAlgError:
            continue
        if jitter > 0.0:
            log.warning("covariance factorization needed jitter %.1e", bump)
        alpha = cho_solve((L, True), yn)
        return L, alpha, bump
    raise GpNumericalError(
        f"covariance not positive definite; attempted jitter values {attempted}"
    )


def build_model(
    spec: KernelSpec,
    inputs: np.ndarray,
    targets: np.ndarray,
    normalization: NormStats | None = None,
) -> GpModel:
    """Normalize raw data, factorize, and assemble a ready-to-query model."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    norm = normalization or NormStats.from_data(inputs, targets)
    Xn = norm.normalize_inputs(inputs)
    yn = norm.normalize_targets(targets)
    L, alpha, jitter = _factorize(spec, Xn, yn)
    if jitter > 0.0:
        spec = KernelSpec(spec.family, spec.lengthscales, spec.signal_variance,
                          spec.nugget + jitter)
        L, alpha, _ = _factorize(spec, Xn, yn)
    return GpModel(spec, Xn, yn, norm, L, alpha, inputs, targets, jitter)


def log_marginal_likelihood(model: GpModel) -> float:
    """-0.5 y'a - sum(log diag L) - (n/2) log(2 pi) on the normalized data."""
    n = model.train_targets.size
    return float(
        -0.5 * model.train_targets @ model.alpha
        - np.sum(np.log(np.diag(model.cholesky_factor)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def _neg_lml_and_grad(theta, family, diffs_sq, yn):
    """Negative LML and gradient w.r.t. log hyperparameters.

    theta = log([lengthscales (d), signal_variance, nugget]).
    diffs_sq is the precomputed (n, n, d) array of per-dimension squared
    input differences.
    """
    d = diffs_sq.shape[2]
    ls2 = np.exp(2.0 * theta[:d])
    sv = np.exp(theta[d])
    ng = np.exp(theta[d + 1])
    n = yn.size

    scaled = diffs_sq / ls2
    sq = scaled.sum(axis=2)
    if family == "squared-exponential":
        corr = np.exp(-0.5 * sq)
        # d corr / d log ls_j divided by scaled_j
        ring = corr
    else:
        r = np.sqrt(np.maximum(sq, 0.0))
        expo = np.exp(-_SQRT5 * r)
        corr = (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * expo
        ring = (5.0 / 3.0) * (1.0 + _SQRT5 * r) * expo

    K = sv * corr + ng * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(theta)
    alpha = cho_solve((L, True), yn)
    lml = -0.5 * yn @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)

    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    base = sv * ring * W
    for j in range(d):
        grad[j] = 0.5 * np.sum(base * scaled[:, :, j])
    grad[d] = 0.5 * np.sum(W * (sv * corr))
    grad[d + 1] = 0.5 * ng * np.trace(W)
    return -lml, -grad


def fit_hyperparameters(
    inputs: np.ndarray,
    targets: np.ndarray,
    family: str = "squared-exponential",
    restarts: int = 3,
    seed=0,
    normalization: NormStats | None = None,
    maxiter: int = 80,
    lengthscale_floors: np.ndarray | None = None,
    nugget_floor: float = NUGGET_BOUNDS[0],
) -> GpModel:
    """Fit kernel hyperparameters by multi-start maximum marginal likelihood.

    The first start is a fixed heuristic (unit lengthscales and signal
    variance on the normalized scale); the remaining ``restarts - 1`` are
    drawn log-uniformly inside the hyperparameter box. Deterministic for a
    given seed. ``lengthscale_floors`` raises individual dimensions' lower
    lengthscale bounds (in normalized units), which callers use to encode
    known smoothness, e.g. of the objective across fidelities; a raised
    ``nugget_floor`` keeps predictions honest for targets with irreducible
    observation scatter.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.size < 2:
        raise ValueError("need at least 2 training points")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    norm = normalization or NormStats.from_data(inputs, targets)
    Xn = norm.normalize_inputs(inputs)
    yn = norm.normalize_targets(targets)
    n, d = Xn.shape

    diffs = Xn[:, None, :] - Xn[None, :, :]
    diffs_sq = diffs * diffs

    ls_lo = np.full(d, LENGTHSCALE_BOUNDS[0])
    if lengthscale_floors is not None:
        ls_lo = np.clip(np.asarray(lengthscale_floors, dtype=float),
                        LENGTHSCALE_BOUNDS[0], LENGTHSCALE_BOUNDS[1] / 2)
    ng_lo = float(np.clip(nugget_floor, NUGGET_BOUNDS[0], NUGGET_BOUNDS[1] / 2))
    lo = np.log(np.concatenate([ls_lo, [SIGNAL_VARIANCE_BOUNDS[0], ng_lo]]))
    hi = np.log(np.array([LENGTHSCALE_BOUNDS[1]] * d
                         + [SIGNAL_VARIANCE_BOUNDS[1], NUGGET_BOUNDS[1]]))
    bounds = list(zip(lo, hi))

    rng = np.random.default_rng(seed)
    first = np.log(np.concatenate([np.maximum(ls_lo, 1.0),
                                   [1.0, max(1e-4, ng_lo)]]))
    starts = [first]
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    best = None
    for theta0 in starts:
        res = minimize(
            _neg_lml_and_grad,
            theta0,
            args=(family, diffs_sq, yn),
            method="L-BFGS-B",
            jac=True,
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise GpNumericalError("all hyperparameter restarts failed to factorize")

    theta = best.x
    spec = KernelSpec(family, np.exp(theta[:d]), float(np.exp(theta[d])),
                      float(np.exp(theta[d + 1])))
    return build_model(spec, inputs, targets, norm)


def posterior(model: GpModel, p: np.ndarray):
    """Posterior mean and std at one normalized point, in normalized units."""
    means, stds = posterior_batch(model, np.atleast_2d(p))
    return float(means[0]), float(stds[0])


def posterior_batch(model: GpModel, P: np.ndarray):
    """Vectorized posterior over normalized query rows.

    Variance is computed as k(p,p) - k' (K + nugget I)^-1 k via the stored
    Cholesky factor, clamped at zero before the square root.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    k_star = kernel_matrix(model.kernel, model.train_inputs, P)
    means = k_star.T @ model.alpha
    v = solve_triangular(model.cholesky_factor, k_star, lower=True)
    var = model.kernel.signal_variance - np.sum(v * v, axis=0)
    return means, np.sqrt(np.maximum(var, 0.0))


def predict(model: GpModel, p: np.ndarray):
    """Posterior at one raw-unit point, de-normalized."""
    means, stds = predict_batch(model, np.atleast_2d(p))
    return float(means[0]), float(stds[0])


def predict_batch(model: GpModel, P: np.ndarray):
    means, stds = posterior_batch(model, model.normalization.normalize_inputs(P))
    return model.normalization.denormalize_mean(means), model.normalization.denormalize_std(stds)


def correlation(model: GpModel, a: np.ndarray, b: np.ndarray) -> float:
    """Noise-free kernel correlation between two normalized points, in (0, 1]."""
    return kernel_eval(model.kernel, a, b) / model.kernel.signal_variance


def correlation_batch(model: GpModel, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Correlation of each row of A against a single normalized point b."""
    k = kernel_matrix(model.kernel, A, np.atleast_2d(b))[:, 0]
    return k / model.kernel.signal_variance


def rowwise_correlation(model: GpModel, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Correlation between paired normalized rows A[i] and B[i]."""
    spec = model.kernel
    diff = (np.atleast_2d(A) - np.atleast_2d(B)) / spec.lengthscales
    sq = np.sum(diff * diff, axis=1)
    return _corr_from_sq(spec.family, sq)


def model_to_dict(model: GpModel) -> dict:
    """JSON-ready snapshot; the factorization is recomputed on load."""
    return {
        "kernel": {
            "family": model.kernel.family,
            "lengthscales": model.kernel.lengthscales.tolist(),
            "signal_variance": model.kernel.signal_variance,
            "nugget": model.kernel.nugget,
        },
        "inputs": model.raw_inputs.tolist(),
        "targets": model.raw_targets.tolist(),
        "normalization": {
            "input_mean": model.normalization.input_mean.tolist(),
            "input_std": model.normalization.input_std.tolist(),
            "target_mean": model.normalization.target_mean,
            "target_std": model.normalization.target_std,
        },
    }


def model_from_dict(payload: dict) -> GpModel:
    kern = payload["kernel"]
    spec = KernelSpec(kern["family"], np.array(kern["lengthscales"], dtype=float),
                      float(kern["signal_variance"]), float(kern["nugget"]))
    ns = payload["normalization"]
    norm = NormStats(
        np.array(ns["input_mean"], dtype=float),
        np.array(ns["input_std"], dtype=float),
        float(ns["target_mean"]),
        float(ns["target_std"]),
    )
    return build_model(spec, np.array(payload["inputs"], dtype=float),
                       np.array(payload["targets"], dtype=float), norm)
