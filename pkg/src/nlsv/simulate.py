"""Euler-scheme simulation of the joint (log price, log variance) system,
Brownian-bridge samplers for data augmentation, and Monte Carlo
conditional expectations.

Simulation always runs in the log-variance coordinate Y = log(V)/sigma,
whose diffusion coefficient is exactly 1.  Positivity of V = exp(sigma*Y)
then holds by construction under any step size, with no truncation fixes.

Bridge samplers draw the auxiliary points between an observation pair
(U_0, U_M) from the recursion

    U_{m+1} = U_m + (U_M - U_m)/(M - m) + sqrt((M-m-1)/(M-m)) * e_m,

with e_m ~ N(0, delta * I) for the plain Brownian bridge and
e_m ~ N(0, delta * Sigma Sigma') for the modified (state-scaled) bridge
used as the importance-sampling proposal of the simulated likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import price_drift, y_drift
from .params import DomainViolation, Family, Measure, ModelSpec, ParamVector, State
from .rng import RngStream


@dataclass
class PathEnsemble:
    """Recorded simulation output: times in years, per-path x and v."""

    times: np.ndarray  # (n_rec,)
    x: np.ndarray      # (n_paths, n_rec)
    v: np.ndarray      # (n_paths, n_rec)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]


@dataclass
class LatticePath:
    """Observations at spacing delta_obs plus M-1 auxiliary points per interval.

    ``observations`` has shape (N+1, 2) holding (x, y) rows; ``auxiliary``
    has shape (N, M-1, 2).  The lattice convention pins interval i's point
    0 to observation i and point M to observation i+1, for a total of
    M*N + 1 augmented points.
    """

    observations: np.ndarray
    auxiliary: np.ndarray
    delta: float  # spacing of the augmented lattice, delta_obs / M

    @property
    def aug_steps(self) -> int:
        return self.auxiliary.shape[1] + 1

    @property
    def total_points(self) -> int:
        n = self.observations.shape[0] - 1
        return self.aug_steps * n + 1

    def interval_points(self, i: int) -> np.ndarray:
        """All M+1 lattice points of interval i, endpoints included."""
        return np.concatenate(
            [self.observations[i : i + 1], self.auxiliary[i], self.observations[i + 1 : i + 2]]
        )


def euler_step(
    x,
    y,
    params: ParamVector,
    spec: ModelSpec,
    measure: Measure,
    dt: float,
    eps,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance (x, y) by one Euler step of size dt.

    ``eps`` has shape (..., 2) with columns (price shock, variance shock),
    each distributed N(0, dt).  Broadcasts over leading dimensions.
    """
    if dt < 0.0:
        raise DomainViolation("dt must be >= 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = np.asarray(eps, dtype=float)
    eps_x, eps_v = eps[..., 0], eps[..., 1]
    v = np.exp(params.sigma * y)
    y_new = y + y_drift(y, params, spec, measure) * dt + eps_v
    sq = np.exp(0.5 * params.sigma * y)
    x_new = (
        x
        + price_drift(v, params, measure) * dt
        + sq * (params.rho * eps_v + np.sqrt(1.0 - params.rho**2) * eps_x)
    )
    return x_new, y_new


def simulate_paths(
    initial: State,
    params: ParamVector,
    spec: ModelSpec,
    measure: Measure,
    dt: float,
    n_steps: int,
    n_paths: int,
    rng: RngStream,
    record_every: int = 1,
) -> PathEnsemble:
    """Simulate an ensemble of independent Euler paths from ``initial``.

    Deterministic given ``rng``.  ``record_every`` thins the stored grid
    (it must divide n_steps); draws are consumed in step-major order so
    two calls with the same stream are bitwise identical regardless of
    the recording stride.
    """
    if n_paths < 1:
        raise DomainViolation("n_paths must be >= 1")
    if n_steps % record_every != 0:
        raise DomainViolation("record_every must divide n_steps")
    initial.validate()
    gen = rng.generator()
    sqrt_dt = np.sqrt(dt)

    x = np.full(n_paths, initial.x, dtype=float)
    y = np.full(n_paths, initial.y(params.sigma), dtype=float)
    n_rec = n_steps // record_every + 1
    xs = np.empty((n_paths, n_rec))
    vs = np.empty((n_paths, n_rec))
    xs[:, 0] = x
    vs[:, 0] = np.exp(params.sigma * y)
    for step in range(1, n_steps + 1):
        eps = gen.standard_normal((n_paths, 2)) * sqrt_dt
        x, y = euler_step(x, y, params, spec, measure, dt, eps)
        if step % record_every == 0:
            k = step // record_every
            xs[:, k] = x
            vs[:, k] = np.exp(params.sigma * y)
    times = np.arange(n_rec) * (dt * record_every)
    return PathEnsemble(times=times, x=xs, v=vs)


def _bridge_recursion(
    u0: np.ndarray,
    u1: np.ndarray,
    aug_steps: int,
    eps: np.ndarray,
    scale: Callable[[np.ndarray], np.ndarray] | None,
) -> np.ndarray:
    """Shared bridge recursion; ``scale`` maps (point, raw noise) pairs."""
    m_total = aug_steps
    current = np.broadcast_to(u0, eps.shape[:-2] + (2,)).astype(float).copy()
    out = np.empty(eps.shape[:-2] + (m_total - 1, 2))
    for m in range(m_total - 1):
        remain = m_total - m
        noise = eps[..., m, :]
        if scale is not None:
            noise = scale(current, noise)
        current = current + (u1 - current) / remain + np.sqrt((remain - 1) / remain) * noise
        out[..., m, :] = current
    return out


def brownian_bridge_fill(
    u0,
    u1,
    aug_steps: int,
    delta: float,
    rng: RngStream | None = None,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """Exact Brownian-bridge draw of the M-1 auxiliary points.

    ``u0`` and ``u1`` are (..., 2) endpoint arrays; the result has shape
    (..., M-1, 2) and is pinned so that the recursion's final step lands
    exactly on ``u1``.  For aug_steps == 1 an empty array is returned.
    Either ``rng`` or a pre-drawn N(0, delta) array ``eps`` of shape
    (..., M-1, 2) must be supplied.
    """
    if aug_steps < 1:
        raise DomainViolation("aug_steps must be >= 1")
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if eps is None:
        if rng is None:
            raise DomainViolation("supply rng or eps")
        shape = np.broadcast_shapes(u0.shape, u1.shape)[:-1] + (aug_steps - 1, 2)
        eps = rng.generator().standard_normal(shape) * np.sqrt(delta)
    if aug_steps == 1:
        return np.empty(eps.shape[:-2] + (0, 2))
    return _bridge_recursion(u0, u1, aug_steps, eps, scale=None)


def modified_bridge_fill(
    u0,
    u1,
    aug_steps: int,
    delta: float,
    params: ParamVector,
    rng: RngStream | None = None,
    eps: np.ndarray | None = None,
) -> np.ndarray:
    """Bridge draw with noise premultiplied by the local diffusion matrix.

    In (x, y) coordinates the diffusion matrix rows are
    (sqrt(1-rho^2)*exp(sigma*y/2), rho*exp(sigma*y/2)) and (0, 1), so the
    y component sees unit noise while the x component is scaled by the
    local volatility.  This is the importance-sampling proposal of the
    simulated-likelihood estimator.
    """
    if aug_steps < 1:
        raise DomainViolation("aug_steps must be >= 1")
    u0 = np.asarray(u0, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if eps is None:
        if rng is None:
            raise DomainViolation("supply rng or eps")
        shape = np.broadcast_shapes(u0.shape, u1.shape)[:-1] + (aug_steps - 1, 2)
        eps = rng.generator().standard_normal(shape) * np.sqrt(delta)
    if aug_steps == 1:
        return np.empty(eps.shape[:-2] + (0, 2))

    rho = params.rho
    root = np.sqrt(1.0 - rho**2)

    def scale(point: np.ndarray, noise: np.ndarray) -> np.ndarray:
        s = np.exp(0.5 * params.sigma * point[..., 1])
        nx = s * (root * noise[..., 0] + rho * noise[..., 1])
        return np.stack([nx, noise[..., 1]], axis=-1)

    return _bridge_recursion(u0, u1, aug_steps, eps, scale=scale)


def fill_lattice(
    x_obs: np.ndarray,
    y_obs: np.ndarray,
    aug_steps: int,
    delta_obs: float,
    rng: RngStream,
) -> LatticePath:
    """Augment an observed (x, y) series with one Brownian-bridge fill per
    interval, each drawn from the substream keyed by its interval index."""
    n = len(x_obs) - 1
    obs = np.stack([np.asarray(x_obs, dtype=float), np.asarray(y_obs, dtype=float)], axis=-1)
    delta = delta_obs / aug_steps
    aux = np.empty((n, aug_steps - 1, 2))
    for i in range(n):
        aux[i] = brownian_bridge_fill(
            obs[i], obs[i + 1], aug_steps, delta, rng=rng.substream(i)
        )
    return LatticePath(observations=obs, auxiliary=aux, delta=delta)


def conditional_expectation(
    initial: State,
    params: ParamVector,
    spec: ModelSpec,
    horizon: float,
    payoff: Callable[[PathEnsemble], np.ndarray],
    n_paths: int,
    dt: float,
    rng: RngStream,
    measure: Measure = Measure.P,
    record_every: int = 1,
) -> tuple[float, float]:
    """Monte Carlo conditional expectation of ``payoff`` at ``horizon``.

    Returns (estimate, standard error).  The payoff receives the recorded
    path ensemble and must return one value per path.  Callers comparing
    models pass the same ``rng`` so both evaluations consume identical
    draws.
    """
    if not horizon > 0.0:
        raise DomainViolation("horizon must be > 0")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise DomainViolation("dt must divide horizon")
    ens = simulate_paths(
        initial, params, spec, measure, dt, n_steps, n_paths, rng, record_every=record_every
    )
    values = np.asarray(payoff(ens), dtype=float)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return mean, se
