"""Gaussian-process surrogate over pruning policies.

A fitted model holds a constant mean (the empirical target mean), ARD kernel
hyperparameters and the lower Cholesky factor of the regularized training
covariance; posterior queries go through triangular solves only, never an
explicit inverse. Hyperparameters are chosen by multi-start maximization of
the log marginal likelihood in log space with analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from . import backend

LOG_2PI = float(np.log(2.0 * np.pi))


class GPFitError(RuntimeError):
    """Raised when the training covariance cannot be factorized."""


@dataclass(frozen=True)
class TrialRecord:
    """One evaluated policy. ``timestamp`` is the logical trial index."""

    policy: np.ndarray
    objective: float
    feasible: bool
    flops_ratio: float
    timestamp: int


@dataclass
class TrialHistory:
    """Ordered evaluation records sharing one policy dimension."""

    records: list[TrialRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dimension(self) -> int:
        if not self.records:
            raise ValueError("empty history has no dimension")
        return len(self.records[0].policy)

    def append(self, record: TrialRecord) -> None:
        if self.records and len(record.policy) != self.dimension:
            raise ValueError("record dimension does not match history")
        if not np.isfinite(record.objective):
            raise ValueError("objective must be finite")
        self.records.append(record)

    def inputs(self) -> np.ndarray:
        return np.array([r.policy for r in self.records], dtype=float)

    def targets(self) -> np.ndarray:
        return np.array([r.objective for r in self.records], dtype=float)

    def best_objective(self) -> float:
        feasible = [r.objective for r in self.records if r.feasible]
        if not feasible:
            raise ValueError("no feasible records")
        return max(feasible)


@dataclass(frozen=True)
class Hyperparameters:
    kind: str
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family, initial values, optimizer bounds and budgets."""

    kind: str = "rbf"  # "rbf" (squared exponential) or "matern52"
    lengthscale: float = 0.3
    signal_variance: float = 1.0
    noise_variance: float = 1e-6
    optimize: bool = True
    n_restarts: int = 8
    optimizer_maxiter: int = 50
    refit_period: int = 5
    jitter: float = 1e-8
    lengthscale_bounds: tuple[float, float] = (1e-2, 1e1)
    signal_bounds: tuple[float, float] = (1e-4, 1e2)
    noise_bounds: tuple[float, float] = (1e-8, 1e-1)

    def initial(self, dimension: int) -> Hyperparameters:
        return Hyperparameters(
            kind=self.kind,
            lengthscales=np.full(dimension, float(self.lengthscale)),
            signal_variance=float(self.signal_variance),
            noise_variance=float(self.noise_variance),
        )


@dataclass(frozen=True)
class GaussianProcessModel:
    """Fitted surrogate; immutable, safe for concurrent posterior queries."""

    hypers: Hyperparameters
    train_inputs: np.ndarray
    centered_targets: np.ndarray
    target_mean: float
    chol_lower: np.ndarray
    alpha: np.ndarray  # (K + noise I)^-1 (y - mean)
    jitter: float
    log_marginal_likelihood: float

    @property
    def dimension(self) -> int:
        return self.train_inputs.shape[1]

    def posterior_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and (noise-free) variance at each query row."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.dimension:
            raise ValueError(
                f"query dimension {queries.shape[1]} != model dimension {self.dimension}"
            )
        cross = _kernel_matrix(self.hypers, queries, self.train_inputs)
        mean = self.target_mean + cross @ self.alpha
        v = solve_triangular(self.chol_lower, cross.T, lower=True)
        var = self.hypers.signal_variance - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)


def _kernel_from_sqdist(hypers: Hyperparameters, sqdist: np.ndarray) -> np.ndarray:
    if hypers.kind == "rbf":
        return hypers.signal_variance * np.exp(-0.5 * sqdist)
    if hypers.kind == "matern52":
        r = np.sqrt(np.maximum(sqdist, 0.0))
        sqrt5_r = np.sqrt(5.0) * r
        return (
            hypers.signal_variance
            * (1.0 + sqrt5_r + (5.0 / 3.0) * sqdist)
            * np.exp(-sqrt5_r)
        )
    raise ValueError(f"unknown kernel kind {hypers.kind!r}")


def _kernel_matrix(hypers: Hyperparameters, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    sqdist = backend.ard_sqdist(
        np.ascontiguousarray(x), np.ascontiguousarray(z), hypers.lengthscales
    )
    return _kernel_from_sqdist(hypers, sqdist)


def _dkernel_dsqdist(hypers: Hyperparameters, sqdist: np.ndarray, kf: np.ndarray) -> np.ndarray:
    # derivative of the noise-free kernel w.r.t. the scaled squared distance
    if hypers.kind == "rbf":
        return -0.5 * kf
    r = np.sqrt(np.maximum(sqdist, 0.0))
    sqrt5_r = np.sqrt(5.0) * r
    return -(5.0 / 6.0) * hypers.signal_variance * (1.0 + sqrt5_r) * np.exp(-sqrt5_r)


def _factorize(kf: np.ndarray, noise: float, jitter: float) -> np.ndarray:
    k = kf + (noise + jitter) * np.eye(kf.shape[0])
    try:
        return cholesky(k, lower=True)
    except np.linalg.LinAlgError as exc:
        raise GPFitError(
            "covariance factorization failed; duplicate inputs with "
            "conflicting targets require a noise floor (noise_variance > 0)"
        ) from exc


def log_marginal_likelihood(
    inputs: np.ndarray,
    centered_targets: np.ndarray,
    hypers: Hyperparameters,
    jitter: float = 1e-8,
) -> float:
    """LML of centered targets under the given hyperparameters."""
    kf = _kernel_matrix(hypers, inputs, inputs)
    lower = _factorize(kf, hypers.noise_variance, jitter)
    alpha = cho_solve((lower, True), centered_targets)
    return float(
        -0.5 * centered_targets @ alpha
        - np.sum(np.log(np.diag(lower)))
        - 0.5 * len(centered_targets) * LOG_2PI
    )


def _lml_and_grad(
    theta: np.ndarray,
    kind: str,
    raw_sq: np.ndarray,
    y: np.ndarray,
    jitter: float,
) -> tuple[float, np.ndarray]:
    """Value and gradient of the LML in log hyperparameter space.

    ``theta`` is ``[log ls_1..log ls_d, log sf2, log sn2]`` and ``raw_sq`` the
    (n, n, d) tensor of unscaled per-dimension squared differences, built once
    per fit so each optimizer step only rescales it.
    """
    d = raw_sq.shape[2]
    ls = np.exp(theta[:d])
    sf2 = np.exp(theta[d])
    sn2 = np.exp(theta[d + 1])
    hypers = Hyperparameters(kind, ls, sf2, sn2)
    inv_sq = 1.0 / (ls * ls)
    sqdist = raw_sq @ inv_sq
    kf = _kernel_from_sqdist(hypers, sqdist)
    n = kf.shape[0]
    lower = _factorize(kf, sn2, jitter)
    alpha = cho_solve((lower, True), y)
    lml = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(lower))) - 0.5 * n * LOG_2PI)

    k_inv = cho_solve((lower, True), np.eye(n))
    w = np.outer(alpha, alpha) - k_inv
    dk_ds = _dkernel_dsqdist(hypers, sqdist, kf)
    g = w * dk_ds
    grad = np.empty(d + 2)
    # d sqdist / d log ls_j = -2 raw_sq_j / ls_j^2
    grad[:d] = -np.einsum("ij,ijk->k", g, raw_sq) * inv_sq
    grad[d] = 0.5 * np.sum(w * kf)
    grad[d + 1] = 0.5 * np.trace(w) * sn2
    return lml, grad


def fit(
    history: TrialHistory,
    config: KernelConfig,
    seed: int = 0,
    hypers: Hyperparameters | None = None,
) -> GaussianProcessModel:
    """Fit the surrogate to the history.

    With ``hypers`` given (or ``config.optimize`` false) only the mean and
    factorization are recomputed. Otherwise the LML is maximized from the
    configured initial point plus ``config.n_restarts`` random log-uniform
    starts drawn from ``seed``, keeping the best; the search is deterministic
    for a given seed.
    """
    if len(history) < 1:
        raise ValueError("history must contain at least one record")
    x = history.inputs()
    y_raw = history.targets()
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y_raw)):
        raise ValueError("history contains non-finite values")
    mean = float(y_raw.mean())
    y = y_raw - mean
    d = x.shape[1]

    if hypers is None and config.optimize:
        hypers = _optimize_hypers(x, y, config, seed)
    elif hypers is None:
        hypers = config.initial(d)
    elif len(hypers.lengthscales) != d:
        raise ValueError("hyperparameter dimension does not match history")

    kf = _kernel_matrix(hypers, x, x)
    lower = _factorize(kf, hypers.noise_variance, config.jitter)
    alpha = cho_solve((lower, True), y)
    lml = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(lower))) - 0.5 * len(y) * LOG_2PI)
    return GaussianProcessModel(
        hypers=hypers,
        train_inputs=x,
        centered_targets=y,
        target_mean=mean,
        chol_lower=lower,
        alpha=alpha,
        jitter=config.jitter,
        log_marginal_likelihood=lml,
    )


def _optimize_hypers(
    x: np.ndarray, y: np.ndarray, config: KernelConfig, seed: int
) -> Hyperparameters:
    n, d = x.shape
    raw_sq = (x[:, None, :] - x[None, :, :]) ** 2
    lo = np.log(
        np.concatenate(
            [
                np.full(d, config.lengthscale_bounds[0]),
                [config.signal_bounds[0], config.noise_bounds[0]],
            ]
        )
    )
    hi = np.log(
        np.concatenate(
            [
                np.full(d, config.lengthscale_bounds[1]),
                [config.signal_bounds[1], config.noise_bounds[1]],
            ]
        )
    )
    initial = config.initial(d)
    theta0 = np.clip(
        np.log(
            np.concatenate(
                [
                    initial.lengthscales,
                    [initial.signal_variance, max(initial.noise_variance, 1e-10)],
                ]
            )
        ),
        lo,
        hi,
    )
    rng = np.random.default_rng(seed)
    starts = [theta0] + [rng.uniform(lo, hi) for _ in range(config.n_restarts)]

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        try:
            lml, grad = _lml_and_grad(theta, config.kind, raw_sq, y, config.jitter)
        except GPFitError:
            return 1e12, np.zeros_like(theta)
        return -lml, -grad

    best_theta, best_val = theta0, np.inf
    for start in starts:
        res = minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": config.optimizer_maxiter},
        )
        if res.fun < best_val:
            best_val, best_theta = float(res.fun), res.x
    ls = np.exp(best_theta[:d])
    return Hyperparameters(
        kind=config.kind,
        lengthscales=ls,
        signal_variance=float(np.exp(best_theta[d])),
        noise_variance=float(np.exp(best_theta[d + 1])),
    )


def posterior(model: GaussianProcessModel, query: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, variance) at a single query policy."""
    query = np.asarray(query, dtype=float)
    if query.ndim != 1:
        raise ValueError("query must be a single policy vector")
    mean, var = model.posterior_batch(query[None, :])
    return float(mean[0]), float(var[0])


def with_noise_floor(config: KernelConfig, floor: float) -> KernelConfig:
    """Copy of ``config`` whose noise variance is at least ``floor``."""
    return replace(config, noise_variance=max(config.noise_variance, floor))
