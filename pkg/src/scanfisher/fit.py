"""Regularized maximum-likelihood fitting of the scanpath model.

The criterion factorizes: the type proportions pi have a closed form, and
each saccade type's amplitude weights (alpha_u, beta_u) and duration weights
(gamma_u, delta_u) are fitted by independent smooth 2M-dimensional
minimizations of

    -sum ln Gamma_pdf(x | exp(W a), exp(W b)) + lambda * sum_m exp(a_m) + exp(b_m)

solved with a quasi-Newton method (L-BFGS-B with analytic gradients),
terminating when the projected-gradient infinity norm drops below the
configured tolerance.
"""

import logging
from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .events import NUM_SACCADE_TYPES, EventBatch, as_batch
from .fisher import digamma
from .model import ModelParams, _LOG_LINK_MAX, _LOG_LINK_MIN
from .util import parallel_map

logger = logging.getLogger(__name__)

PI_SMOOTHING = 1e-6
LAMBDA_GRID = (0.0, 1e-4, 1e-2, 1.0)


class FitError(ValueError):
    """Fitting preconditions violated (e.g. no events at all)."""


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1e-2
    tol: float = 1e-6
    max_iter: int = 500
    num_features: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise FitError("lambda must be >= 0")
        if self.tol <= 0:
            raise FitError("tolerance must be > 0")
        if self.max_iter < 1:
            raise FitError("max_iter must be >= 1")


def fit_pi(events) -> np.ndarray:
    """Multinomial MLE over saccade types with zero-count smoothing."""
    if not isinstance(events, EventBatch):
        events = list(events)
        if not events:
            raise FitError("cannot fit pi from an empty event set")
        events = EventBatch.from_events(events)
    if events.n == 0:
        raise FitError("cannot fit pi from an empty event set")
    pi = events.type_counts() / events.n
    pi[pi == 0.0] = PI_SMOOTHING
    return pi / pi.sum()


def _objective(theta: np.ndarray, x: np.ndarray, W: np.ndarray, lam: float):
    """Negative regularized gamma log-likelihood and its gradient.

    theta = [shape weights (M), scale weights (M)].  The linear predictors are
    clamped to the link bounds; the analytic gradient uses the clamped values,
    which only deviates from the true gradient at the (non-operating) bounds.
    """
    m = W.shape[1]
    a, b = theta[:m], theta[m:]
    eta_shape = np.clip(W @ a, _LOG_LINK_MIN, _LOG_LINK_MAX)
    eta_scale = np.clip(W @ b, _LOG_LINK_MIN, _LOG_LINK_MAX)
    shape = np.exp(eta_shape)
    log_x = np.log(x)
    x_over_scale = x * np.exp(-eta_scale)
    loglik = float(np.sum((shape - 1.0) * log_x - x_over_scale - gammaln(shape) - shape * eta_scale))
    reg_shape = np.exp(np.clip(a, None, 500.0))
    reg_scale = np.exp(np.clip(b, None, 500.0))
    value = -loglik + lam * float(reg_shape.sum() + reg_scale.sum())
    grad_shape = -(W.T @ (shape * (log_x - digamma(shape) - eta_scale))) + lam * reg_shape
    grad_scale = -(W.T @ (x_over_scale - shape)) + lam * reg_scale
    return value, np.concatenate([grad_shape, grad_scale])


def neg_loglik_and_grad_amplitude(alpha_u, beta_u, events, lam: float):
    """Regularized negative log-likelihood of type-u amplitudes, with gradient."""
    batch = as_batch(events)
    theta = np.concatenate([np.asarray(alpha_u, float), np.asarray(beta_u, float)])
    return _objective(theta, batch.amp, batch.w_launch, lam)


def neg_loglik_and_grad_duration(gamma_u, delta_u, events, lam: float):
    """Mirror of the amplitude objective for durations and landing features."""
    batch = as_batch(events)
    theta = np.concatenate([np.asarray(gamma_u, float), np.asarray(delta_u, float)])
    return _objective(theta, batch.dur, batch.w_land, lam)


def _moment_init(x: np.ndarray, m: int) -> np.ndarray:
    """Bias weights from method-of-moments, all feature weights zero."""
    mean = float(x.mean())
    var = float(x.var())
    var = max(var, 1e-12 * max(mean * mean, 1e-12))
    shape = float(np.clip(mean * mean / var, 1e-3, 1e6))
    scale = mean / shape
    theta = np.zeros(2 * m)
    theta[0] = np.log(shape)
    theta[m] = np.log(scale)
    return theta


@dataclass
class GroupFit:
    """Diagnostics of one per-type optimization."""

    kind: str           # "amplitude" or "duration"
    u: int
    n_events: int
    bias_only: bool
    initial_objective: float
    final_objective: float
    n_iterations: int
    grad_norm: float
    objective_trace: list[float] = field(default_factory=list)


@dataclass
class FitOutcome:
    params: ModelParams
    groups: list[GroupFit]


def _fit_group(
    kind: str,
    u: int,
    x: np.ndarray,
    W: np.ndarray,
    config: FitConfig,
    collect_trace: bool = False,
) -> tuple[np.ndarray, np.ndarray, GroupFit]:
    m_full = W.shape[1]
    n = len(x)
    shape_w = np.zeros(m_full)
    scale_w = np.zeros(m_full)
    if n == 0:
        logger.warning("no %s events of type %d; keeping zero weights", kind, u)
        info = GroupFit(kind, u, 0, True, 0.0, 0.0, 0, 0.0)
        return shape_w, scale_w, info

    bias_only = n < 2 * m_full
    if bias_only and m_full > 1:
        logger.warning(
            "only %d %s events of type %d (< 2M=%d); falling back to bias-only fit",
            n, kind, u, 2 * m_full,
        )
        W_used = W[:, :1]
    else:
        bias_only = False
        W_used = W
    m = W_used.shape[1]

    theta0 = _moment_init(x, m)
    f0, _ = _objective(theta0, x, W_used, config.lam)
    trace = [f0]
    callback = None
    if collect_trace:
        callback = lambda xk: trace.append(_objective(xk, x, W_used, config.lam)[0])

    def fun(theta):
        return _objective(theta, x, W_used, config.lam)

    result = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        callback=callback,
        options={"maxiter": config.max_iter, "gtol": config.tol, "ftol": 1e-12},
    )
    theta = result.x
    shape_w[0] = theta[0]
    scale_w[0] = theta[m]
    if not bias_only:
        shape_w[:] = theta[:m]
        scale_w[:] = theta[m:]
    info = GroupFit(
        kind=kind,
        u=u,
        n_events=n,
        bias_only=bias_only,
        initial_objective=f0,
        final_objective=float(result.fun),
        n_iterations=int(result.nit),
        grad_norm=float(np.max(np.abs(result.jac))),
        objective_trace=trace,
    )
    return shape_w, scale_w, info


def fit_model_detailed(
    events,
    config: FitConfig,
    threads: int = 1,
    collect_trace: bool = True,
) -> FitOutcome:
    """Fit pi and all per-type gamma GLMs; returns parameters plus diagnostics.

    `collect_trace=False` skips the per-iteration objective recomputation
    used for fit logs, roughly halving the cost of each subproblem.
    """
    if not isinstance(events, EventBatch):
        events = list(events)
        if not events and config.num_features is None:
            raise FitError("cannot fit a model from an empty event set")
    batch = as_batch(events, num_features=config.num_features)
    if batch.n == 0:
        raise FitError("cannot fit a model from an empty event set")
    if config.num_features is not None and batch.num_features != config.num_features:
        raise FitError(
            f"configured M={config.num_features} but events carry M={batch.num_features}"
        )
    pi = fit_pi(batch)

    jobs = []
    for u in range(1, NUM_SACCADE_TYPES + 1):
        mask = batch.u == u
        jobs.append(("amplitude", u, batch.amp[mask], batch.w_launch[mask]))
        jobs.append(("duration", u, batch.dur[mask], batch.w_land[mask]))

    results = parallel_map(
        lambda job: _fit_group(job[0], job[1], job[2], job[3], config, collect_trace),
        jobs,
        threads=threads,
    )

    m = batch.num_features
    alpha = np.zeros((NUM_SACCADE_TYPES, m))
    beta = np.zeros((NUM_SACCADE_TYPES, m))
    gamma = np.zeros((NUM_SACCADE_TYPES, m))
    delta = np.zeros((NUM_SACCADE_TYPES, m))
    groups = []
    for (kind, u, _, _), (shape_w, scale_w, info) in zip(jobs, results):
        if kind == "amplitude":
            alpha[u - 1] = shape_w
            beta[u - 1] = scale_w
        else:
            gamma[u - 1] = shape_w
            delta[u - 1] = scale_w
        groups.append(info)
    params = ModelParams(pi=pi, alpha=alpha, beta=beta, gamma=gamma, delta=delta)
    return FitOutcome(params=params, groups=groups)


def fit_model(events, config: FitConfig, threads: int = 1) -> ModelParams:
    """Regularized maximum-likelihood parameters for an event collection."""
    return fit_model_detailed(events, config, threads=threads, collect_trace=False).params
