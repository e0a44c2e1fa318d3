"""Observed-data log-likelihood with simulated transition densities, the
nested estimation driver and sandwich standard errors.

The observation vector is (log price X_i, implied variance IV_i) at daily
spacing.  With the swap relation IV = A + B*V and the log-variance
transform Y = log(V)/sigma, the log-likelihood in (X, Y) coordinates is

    l(theta) = sum_i [ log p(X_i, Y_i | X_{i-1}, Y_{i-1}) - sigma * Y_i ]
               - N * ( log B + log sigma ),

where the last term collects the constant Jacobian factors of both
changes of variable per observation.  The transition density p has no
closed form; it is estimated by importance sampling: average over S
modified-bridge paths of the product of Euler step densities divided by
the product of proposal densities.

The estimation driver searches only over (sigma, rho, b0_q, b1_q): at
every trial point the drift coefficients under the physical measure have
closed-form optima computed by the bridge-expectation linear systems, so
the outer problem is four-dimensional for both families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from . import eml
from .model import (
    SWAP_TENOR_YEARS,
    gamma_transform,
    iv_to_v,
    price_drift,
    swap_coefficients,
    y_drift,
)
from .params import DomainViolation, Family, Measure, ModelSpec, ParamVector
from .rng import RngStream

#: Top-level stream ids reserved by the estimation pipeline.
STREAM_EML = 1
STREAM_SML = 2
STREAM_INIT = 3

_PENALTY = 1e12


class DensityUnderflow(RuntimeError):
    """All importance weights underflowed for at least one interval."""

    def __init__(self, n_failed: int):
        self.n_failed = n_failed
        super().__init__(f"importance weights underflowed on {n_failed} interval(s)")


@dataclass(frozen=True)
class LikelihoodConfig:
    """Budgets and tolerances of the simulated-likelihood machinery.

    ``aug_steps`` is the number of Euler sub-steps per observation
    interval (config key ``M``) and ``mc_draws`` the importance-sample
    size (config key ``S``); the default pairing keeps S = M^2 = 576.
    """

    aug_steps: int = 24
    mc_draws: int = 576
    n_bridges: int | None = None  # bridge expectation draws; defaults to mc_draws
    seed: int = 0
    delta_obs: float = 1.0 / 262.0
    swap_tenor: float = SWAP_TENOR_YEARS
    rate: float = 0.05
    dampening_c: float = 1e-6
    max_iter: int = 400
    restarts: int = 3
    xatol: float = 1e-5
    fatol: float = 1e-7
    min_obs: int = 200
    chunk_size: int = 256

    def __post_init__(self):
        for name in ("aug_steps", "mc_draws", "max_iter"):
            if getattr(self, name) < 1:
                raise DomainViolation(f"{name} must be >= 1")
        if self.delta_obs <= 0 or self.swap_tenor <= 0:
            raise DomainViolation("delta_obs and swap_tenor must be > 0")

    @property
    def bridge_draws(self) -> int:
        return self.mc_draws if self.n_bridges is None else self.n_bridges


@dataclass
class SmlDiagnostics:
    """Per-evaluation health report of the importance-sampling average."""

    logdensity: np.ndarray
    rel_se: np.ndarray  # standard error of the density estimate / estimate


@dataclass
class FitResult:
    params: ParamVector
    spec: ModelSpec
    loglik: float
    param_names: tuple[str, ...]
    covariance: np.ndarray
    std_errors: dict[str, float]
    converged: bool
    n_iterations: int
    n_evaluations: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "kind": "fit_result",
            "family": self.spec.family.value,
            "params": {k: getattr(self.params, k) for k in _full_param_names(self.spec) + ("r", "c")},
            "loglik": self.loglik,
            "param_names": list(self.param_names),
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "std_errors": {k: float(v) for k, v in self.std_errors.items()},
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "n_evaluations": self.n_evaluations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FitResult":
        spec = ModelSpec(Family(payload["family"]))
        params = ParamVector(**payload["params"])
        return cls(
            params=params,
            spec=spec,
            loglik=float(payload["loglik"]),
            param_names=tuple(payload["param_names"]),
            covariance=np.asarray(payload["covariance"], dtype=float),
            std_errors={k: float(v) for k, v in payload["std_errors"].items()},
            converged=bool(payload["converged"]),
            n_iterations=int(payload["n_iterations"]),
            n_evaluations=int(payload["n_evaluations"]),
            seed=int(payload["seed"]),
        )


def _full_param_names(spec: ModelSpec) -> tuple[str, ...]:
    if spec.family is Family.LN:
        return ("sigma", "rho", "b0_q", "b1_q", "a0", "a1", "b1")
    if spec.family is Family.NL:
        return ("sigma", "rho", "b0_q", "b1_q", "a0", "a1", "b0", "b1", "b2", "b3")
    raise DomainViolation("RW has no estimated parameters")


def _gauss2_logpdf(rx, ry, v, sq, rho: float, scale) -> np.ndarray:
    """Log-density of a centered bivariate normal with covariance
    scale * [[v, rho*sqrt(v)], [rho*sqrt(v), 1]]."""
    one_m_r2 = 1.0 - rho**2
    det = scale**2 * v * one_m_r2
    quad = (rx * rx - 2.0 * rho * sq * rx * ry + v * ry * ry) / (scale * v * one_m_r2)
    return -math.log(2.0 * math.pi) - 0.5 * np.log(det) - 0.5 * quad


def _euler_logpdf_raw(u_next, u_curr, params: ParamVector, spec: ModelSpec, delta: float):
    """Euler step log-density without domain checks; overflow in the
    state transform propagates as non-finite values to be sanitized by
    the caller (an escaped draw has zero importance weight)."""
    sigma = params.sigma
    y0 = u_curr[..., 1]
    v = np.exp(sigma * y0)
    sq = np.exp(0.5 * sigma * y0)
    mean_x = (params.a0 + params.a1 * v) * delta
    if spec.family is Family.LN:
        var_drift = params.b0_q + params.b1 * v
    else:
        var_drift = params.b0 + params.b1 * v + params.b2 * v * v + params.b3 / v
    mean_y = (var_drift / (sigma * v) - 0.5 * sigma) * delta
    rx = u_next[..., 0] - u_curr[..., 0] - mean_x
    ry = u_next[..., 1] - u_curr[..., 1] - mean_y
    return _gauss2_logpdf(rx, ry, v, sq, params.rho, delta)


def euler_density(u_next, u_curr, params: ParamVector, spec: ModelSpec, delta: float) -> np.ndarray:
    """Log-density of one Euler step in (x, y) coordinates.

    The increment has mean (price drift, y drift) * delta and covariance
    delta * Sigma Sigma' evaluated at the departing state; broadcasting
    over leading dimensions is supported.
    """
    if not delta > 0.0:
        raise DomainViolation("delta must be > 0")
    u_next = np.asarray(u_next, dtype=float)
    u_curr = np.asarray(u_curr, dtype=float)
    x0, y0 = u_curr[..., 0], u_curr[..., 1]
    v = np.exp(params.sigma * y0)
    sq = np.exp(0.5 * params.sigma * y0)
    rx = u_next[..., 0] - x0 - price_drift(v, params, Measure.P) * delta
    ry = u_next[..., 1] - y0 - y_drift(y0, params, spec, Measure.P) * delta
    return _gauss2_logpdf(rx, ry, v, sq, params.rho, delta)


def proposal_density_q(
    u_next, u_curr, u_end, params: ParamVector, m: int, aug_steps: int, delta: float
) -> np.ndarray:
    """Log-density of the modified-bridge proposal for lattice step m.

    The proposal pulls toward the interval endpoint: mean
    u_curr + (u_end - u_curr)/(M - m), covariance
    (M-m-1)/(M-m) * Sigma Sigma' * delta.  The final lattice point
    (m = M-1) is deterministic and has no density.
    """
    if not 0 <= m < aug_steps - 1:
        raise DomainViolation(f"m must be in [0, {aug_steps - 1}), got {m}")
    u_next = np.asarray(u_next, dtype=float)
    u_curr = np.asarray(u_curr, dtype=float)
    u_end = np.asarray(u_end, dtype=float)
    remain = aug_steps - m
    fac = (remain - 1) / remain
    y0 = u_curr[..., 1]
    v = np.exp(params.sigma * y0)
    sq = np.exp(0.5 * params.sigma * y0)
    mean = u_curr + (u_end - u_curr) / remain
    rx = u_next[..., 0] - mean[..., 0]
    ry = u_next[..., 1] - mean[..., 1]
    return _gauss2_logpdf(rx, ry, v, sq, params.rho, fac * delta)


def _sml_batch(
    u_from: np.ndarray,
    u_to: np.ndarray,
    params: ParamVector,
    spec: ModelSpec,
    config: LikelihoodConfig,
    eps: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized importance-sampling estimate; returns (logdensity, rel_se).

    ``u_from`` and ``u_to`` have shape (..., 2); ``eps`` must be
    N(0, delta) draws of shape (..., S, M-1, 2) when M > 1.
    """
    m_total = config.aug_steps
    delta = config.delta_obs / m_total
    if m_total == 1:
        ld = euler_density(u_to, u_from, params, spec, delta)
        return ld, np.zeros_like(ld)

    s_draws = config.mc_draws
    rho, sigma = params.rho, params.sigma
    root = np.sqrt(1.0 - rho**2)
    base = np.broadcast_shapes(u_from.shape, u_to.shape)[:-1]
    current = np.broadcast_to(u_from[..., None, :], base + (s_draws, 2)).astype(float).copy()
    end = np.broadcast_to(u_to[..., None, :], base + (s_draws, 2))
    logw = np.zeros(base + (s_draws,))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for m in range(m_total - 1):
            remain = m_total - m
            fac = (remain - 1) / remain
            e = eps[..., m, :]
            s = np.exp(0.5 * sigma * current[..., 1])
            noise = np.stack(
                [s * (root * e[..., 0] + rho * e[..., 1]), e[..., 1]], axis=-1
            )
            nxt = current + (end - current) / remain + np.sqrt(fac) * noise
            logw += _euler_logpdf_raw(nxt, current, params, spec, delta)
            y0 = current[..., 1]
            v = np.exp(sigma * y0)
            sq = np.exp(0.5 * sigma * y0)
            mean = current + (end - current) / remain
            logw -= _gauss2_logpdf(
                nxt[..., 0] - mean[..., 0], nxt[..., 1] - mean[..., 1],
                v, sq, rho, fac * delta,
            )
            current = nxt
        logw += _euler_logpdf_raw(end, current, params, spec, delta)

    # A draw that escaped the representable state region carries zero weight.
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    with np.errstate(invalid="ignore"):
        logdensity = logsumexp(logw, axis=-1) - math.log(s_draws)
    # Relative standard error of the density-scale average, computed on
    # max-shifted weights for stability.
    shift = np.max(logw, axis=-1, keepdims=True)
    shifted = np.exp(logw - np.where(np.isfinite(shift), shift, 0.0))
    mean_w = shifted.mean(axis=-1)
    std_w = shifted.std(axis=-1, ddof=1) if s_draws > 1 else np.zeros(base)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_se = np.where(mean_w > 0.0, std_w / (mean_w * math.sqrt(s_draws)), np.inf)
    return logdensity, rel_se


def sml_transition_logdensity(
    u_from,
    u_to,
    params: ParamVector,
    spec: ModelSpec,
    config: LikelihoodConfig,
    rng: RngStream,
    eps: np.ndarray | None = None,
    return_diagnostics: bool = False,
):
    """Simulated log transition density over one observation interval.

    Deterministic given ``rng``.  With aug_steps == 1 this reduces exactly
    to the Euler density.  Raises :class:`DensityUnderflow` when every
    importance weight underflows for some endpoint pair.
    """
    u_from = np.asarray(u_from, dtype=float)
    u_to = np.asarray(u_to, dtype=float)
    if eps is None and config.aug_steps > 1:
        shape = (
            np.broadcast_shapes(u_from.shape, u_to.shape)[:-1]
            + (config.mc_draws, config.aug_steps - 1, 2)
        )
        eps = rng.generator().standard_normal(shape) * math.sqrt(
            config.delta_obs / config.aug_steps
        )
    logdensity, rel_se = _sml_batch(u_from, u_to, params, spec, config, eps)
    n_failed = int(np.count_nonzero(~np.isfinite(logdensity)))
    if n_failed:
        raise DensityUnderflow(n_failed)
    if return_diagnostics:
        return SmlDiagnostics(logdensity=logdensity, rel_se=rel_se)
    return logdensity if logdensity.ndim else float(logdensity)


def series_to_lattice_coords(series, params: ParamVector, swap_tenor: float):
    """Map an observed (x, iv) series to (x, y) estimation coordinates."""
    v = iv_to_v(series.iv, params, swap_tenor)
    y = gamma_transform(v, params.sigma)
    return np.asarray(series.x, dtype=float), y


def likelihood_eps(rng: RngStream, interval_indices, config: LikelihoodConfig) -> np.ndarray:
    """Raw N(0, delta) importance-sampling innovations per interval.

    Parameter-independent, so one array can serve every trial point of an
    optimization (common random numbers); interval i always draws from
    ``rng.substream(i)``.
    """
    delta = config.delta_obs / config.aug_steps
    indices = list(interval_indices)
    out = np.empty((len(indices), config.mc_draws, config.aug_steps - 1, 2))
    scale = math.sqrt(delta)
    for j, i in enumerate(indices):
        out[j] = rng.substream(int(i)).generator().standard_normal(
            (config.mc_draws, config.aug_steps - 1, 2)
        ) * scale
    return out


def total_loglik(
    series,
    params: ParamVector,
    spec: ModelSpec,
    config: LikelihoodConfig,
    rng: RngStream,
    return_contributions: bool = False,
    diagnostics: dict | None = None,
    eps: np.ndarray | None = None,
):
    """Full-sample log-likelihood in (x, y) coordinates.

    Sums the simulated transition log-densities over all observation
    pairs, subtracts the per-observation change-of-variable term
    sigma * Y_i and the constant N * (log B + log sigma).  Parameter
    points at which the implied-variance inversion leaves the variance
    domain, or at which every importance weight underflows, evaluate to
    -inf; ``diagnostics`` (when given) receives the failure count.

    Per-interval draws come from ``rng.substream(i)``, so the value does
    not depend on how intervals are partitioned across workers.
    """
    if diagnostics is not None:
        diagnostics.clear()
        diagnostics["n_failed_intervals"] = 0
    try:
        x, y = series_to_lattice_coords(series, params, config.swap_tenor)
    except DomainViolation:
        if diagnostics is not None:
            diagnostics["n_failed_intervals"] = len(series.iv)
        return (-np.inf, None) if return_contributions else -np.inf

    n = len(x) - 1
    if n < 1:
        raise DomainViolation("series must contain at least 2 observations")
    u = np.stack([x, y], axis=-1)

    logp = np.empty(n)
    for lo in range(0, n, config.chunk_size):
        hi = min(lo + config.chunk_size, n)
        if config.aug_steps > 1:
            eps_blk = (
                eps[lo:hi]
                if eps is not None
                else likelihood_eps(rng, range(lo, hi), config)
            )
        else:
            eps_blk = None
        logp[lo:hi], _ = _sml_batch(
            u[lo:hi], u[lo + 1 : hi + 1], params, spec, config, eps_blk
        )

    n_failed = int(np.count_nonzero(~np.isfinite(logp)))
    if n_failed:
        if diagnostics is not None:
            diagnostics["n_failed_intervals"] = n_failed
        return (-np.inf, None) if return_contributions else -np.inf

    _, b_coef = swap_coefficients(params, config.swap_tenor)
    constant = math.log(b_coef) + math.log(params.sigma)
    contributions = logp - params.sigma * y[1:] - constant
    total = float(contributions.sum())
    if return_contributions:
        return total, contributions
    return total


# ----------------------------------------------------------------------
# Parameter transforms for the outer search and the sandwich
# ----------------------------------------------------------------------

_LOG_PARAMS = ("sigma", "b0_q")
_ATANH_PARAMS = ("rho",)


def to_unconstrained(params: ParamVector, names: Sequence[str]) -> np.ndarray:
    out = []
    for name in names:
        value = getattr(params, name)
        if name in _LOG_PARAMS:
            out.append(math.log(value))
        elif name in _ATANH_PARAMS:
            out.append(math.atanh(value))
        else:
            out.append(value)
    return np.array(out)


def from_unconstrained(vec: np.ndarray, names: Sequence[str], template: ParamVector) -> ParamVector:
    updates = {}
    for name, value in zip(names, vec):
        if name in _LOG_PARAMS:
            updates[name] = math.exp(value)
        elif name in _ATANH_PARAMS:
            updates[name] = math.tanh(value)
        else:
            updates[name] = float(value)
    return replace(template, **updates)


def _transform_jacobian(params: ParamVector, names: Sequence[str]) -> np.ndarray:
    """Diagonal of d(natural)/d(unconstrained) at ``params``."""
    diag = []
    for name in names:
        value = getattr(params, name)
        if name in _LOG_PARAMS:
            diag.append(value)
        elif name in _ATANH_PARAMS:
            diag.append(1.0 - value**2)
        else:
            diag.append(1.0)
    return np.array(diag)


def moment_init(series, config: LikelihoodConfig) -> dict[str, float]:
    """Crude moment-matched starting point for the outer search.

    sigma from the realized vol-of-vol of log implied variance (its
    quadratic variation equals sigma^2 per year when IV is proportional
    to V), rho from the correlation of price and log-IV increments; the
    pricing-measure drift starts at a mild positive slope.
    """
    iv = np.asarray(series.iv, dtype=float)
    x = np.asarray(series.x, dtype=float)
    dliv = np.diff(np.log(iv))
    sigma0 = float(np.std(dliv) / math.sqrt(config.delta_obs))
    sigma0 = min(max(sigma0, 0.2), 10.0)
    dx = np.diff(x)
    rho0 = float(np.corrcoef(dx, dliv)[0, 1]) if len(dx) > 2 else 0.0
    rho0 = min(max(rho0, -0.95), 0.95)
    return {"sigma": sigma0, "rho": rho0, "b0_q": 0.5 * float(np.mean(iv)), "b1_q": 1.0}


def _profile_params(
    eta: np.ndarray,
    series,
    spec: ModelSpec,
    config: LikelihoodConfig,
    base: ParamVector,
    rng_eml: RngStream,
    eml_eps: np.ndarray | None = None,
) -> ParamVector | None:
    """Trial parameter vector with closed-form drift coefficients, or None
    when the trial point is infeasible."""
    outer_names = ("sigma", "rho", "b0_q", "b1_q")
    if np.any(np.abs(eta) > 50.0):
        return None
    trial = from_unconstrained(eta, outer_names, base)
    try:
        x, y = series_to_lattice_coords(series, trial, config.swap_tenor)
        vp = eml.solve_variance_drift(
            x, y, trial, spec, config.delta_obs, config.aug_steps,
            config.bridge_draws, rng_eml, eps=eml_eps,
        )
        trial = trial.with_variance_coeffs(spec, [vp[k] for k in sorted(vp, key=_coeff_order)])
        a0, a1 = eml.solve_stock_drift(
            x, y, trial, spec, config.delta_obs, config.aug_steps,
            config.bridge_draws, rng_eml, eps=eml_eps,
        )
        return trial.with_stock_coeffs(a0, a1)
    except (DomainViolation, eml.IllConditionedSystem, FloatingPointError):
        return None


#: Cache raw innovation arrays up to this many bytes inside fit(); larger
#: budgets re-draw per evaluation to bound memory.
_EPS_CACHE_LIMIT = 1_000_000_000


def _maybe_cache_eps(series, config: LikelihoodConfig, rng_eml: RngStream, rng_sml: RngStream):
    """Pre-draw the parameter-independent innovations when they fit in memory."""
    if config.aug_steps == 1:
        return None, None
    n = len(series.iv) - 1
    per_interval = config.aug_steps - 1
    sml_bytes = n * config.mc_draws * per_interval * 2 * 8
    eml_bytes = (n - 1) * config.bridge_draws * per_interval * 2 * 8
    eml_eps = None
    sml_eps = None
    if eml_bytes <= _EPS_CACHE_LIMIT:
        delta = config.delta_obs / config.aug_steps
        eml_eps = eml.draw_bridge_eps(
            rng_eml, np.arange(1, n), config.bridge_draws, config.aug_steps, delta
        )
    if sml_bytes <= _EPS_CACHE_LIMIT:
        sml_eps = likelihood_eps(rng_sml, range(n), config)
    return eml_eps, sml_eps


def _coeff_order(name: str) -> int:
    return {"b0": 0, "b1": 1, "b2": 2, "b3": 3}[name]


def fit(
    series,
    spec: ModelSpec,
    config: LikelihoodConfig,
    init: dict[str, float] | None = None,
) -> FitResult:
    """Nested spread of the estimation: derivative-free outer search over
    (sigma, rho, b0_q, b1_q) with closed-form drift coefficients inside.

    The same random draws (keyed by ``config.seed``) are reused at every
    trial point so the simulated likelihood surface is smooth in the
    parameters.  Deterministic: identical (series, spec, config, init)
    give identical results.
    """
    if len(series.iv) < config.min_obs:
        raise DomainViolation(
            f"series has {len(series.iv)} observations, below the minimum {config.min_obs}"
        )
    rng_eml = RngStream(config.seed, STREAM_EML)
    rng_sml = RngStream(config.seed, STREAM_SML)
    base = ParamVector(
        sigma=1.0, rho=0.0, b0_q=0.05, b1_q=0.0, r=config.rate, c=config.dampening_c
    )

    start = moment_init(series, config)
    if init:
        start.update(init)
    outer_names = ("sigma", "rho", "b0_q", "b1_q")
    eta0 = to_unconstrained(
        replace(base, **{k: start[k] for k in outer_names}), outer_names
    )

    eml_eps, sml_eps = _maybe_cache_eps(series, config, rng_eml, rng_sml)
    evaluations = 0

    def objective(eta: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        trial = _profile_params(eta, series, spec, config, base, rng_eml, eml_eps)
        if trial is None:
            return _PENALTY
        ll = total_loglik(series, trial, spec, config, rng_sml, eps=sml_eps)
        if not np.isfinite(ll):
            return _PENALTY
        return -ll

    jitter_gen = RngStream(config.seed, STREAM_INIT).generator()
    best = None
    n_iterations = 0
    converged = False
    for restart in range(max(1, config.restarts)):
        eta_start = eta0 if restart == 0 else eta0 + 0.1 * jitter_gen.standard_normal(4)
        result = minimize(
            objective,
            eta_start,
            method="Nelder-Mead",
            options={
                "maxiter": config.max_iter,
                "xatol": config.xatol,
                "fatol": config.fatol,
            },
        )
        n_iterations += int(result.nit)
        if best is None or result.fun < best.fun:
            best = result
            converged = bool(result.success)

    if best is None or best.fun >= _PENALTY:
        raise DomainViolation("optimizer never found a feasible parameter point")

    theta_star = _profile_params(best.x, series, spec, config, base, rng_eml, eml_eps)
    loglik = total_loglik(series, theta_star, spec, config, rng_sml, eps=sml_eps)
    names, cov, se = sandwich_errors(series, theta_star, spec, config, sml_eps=sml_eps)
    return FitResult(
        params=theta_star,
        spec=spec,
        loglik=float(loglik),
        param_names=names,
        covariance=cov,
        std_errors=dict(zip(names, se)),
        converged=converged,
        n_iterations=n_iterations,
        n_evaluations=evaluations,
        seed=config.seed,
    )


def sandwich_errors(
    series,
    theta_star: ParamVector,
    spec: ModelSpec,
    config: LikelihoodConfig,
    score_step: float = 1e-5,
    hessian_step: float = 1e-3,
    sml_eps: np.ndarray | None = None,
) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    """Huber sandwich covariance H^{-1} OPG H^{-1} / N for the full vector.

    Scores are per-observation central differences with relative step
    ``score_step`` in the unconstrained parameterization; the Hessian uses
    the 4-point cross scheme at the larger ``hessian_step``.  The result
    is mapped back to natural parameter units, and the returned standard
    errors are the square roots of its diagonal.
    """
    names = _full_param_names(spec)
    rng_sml = RngStream(config.seed, STREAM_SML)
    eta0 = to_unconstrained(theta_star, names)
    p = len(names)
    n_obs = len(series.iv) - 1
    if sml_eps is None and config.aug_steps > 1:
        n_bytes = n_obs * config.mc_draws * (config.aug_steps - 1) * 2 * 8
        if n_bytes <= _EPS_CACHE_LIMIT:
            sml_eps = likelihood_eps(rng_sml, range(n_obs), config)

    def contributions(eta: np.ndarray) -> np.ndarray:
        params = from_unconstrained(eta, names, theta_star)
        total, contrib = total_loglik(
            series, params, spec, config, rng_sml, return_contributions=True, eps=sml_eps
        )
        if contrib is None:
            raise DomainViolation("likelihood not finite near the optimum")
        return contrib

    steps_s = score_step * np.maximum(1.0, np.abs(eta0))
    scores = np.empty((n_obs, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = steps_s[j]
        scores[:, j] = (contributions(eta0 + e) - contributions(eta0 - e)) / (2.0 * steps_s[j])
    opg = scores.T @ scores / n_obs

    steps_h = hessian_step * np.maximum(1.0, np.abs(eta0))
    hess = np.empty((p, p))
    l0 = float(contributions(eta0).sum())

    def total_at(offset: np.ndarray) -> float:
        return float(contributions(eta0 + offset).sum())

    for j in range(p):
        ej = np.zeros(p)
        ej[j] = steps_h[j]
        hess[j, j] = (total_at(ej) - 2.0 * l0 + total_at(-ej)) / steps_h[j] ** 2
        for k in range(j + 1, p):
            ek = np.zeros(p)
            ek[k] = steps_h[k]
            cross = (
                total_at(ej + ek) - total_at(ej - ek) - total_at(-ej + ek) + total_at(-ej - ek)
            ) / (4.0 * steps_h[j] * steps_h[k])
            hess[j, k] = cross
            hess[k, j] = cross
    h_avg = hess / n_obs

    try:
        h_inv = np.linalg.inv(h_avg)
    except np.linalg.LinAlgError as exc:
        raise eml.IllConditionedSystem(np.inf, f"Hessian not invertible: {exc}") from exc
    cov_eta = h_inv @ opg @ h_inv / n_obs
    cov_eta = 0.5 * (cov_eta + cov_eta.T)
    jac = _transform_jacobian(theta_star, names)
    cov = cov_eta * np.outer(jac, jac)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return names, cov, se
