"""Parameter containers and model family tags.

The joint system is a log price X and an instantaneous variance V with a
GARCH-diffusion volatility structure.  Under the pricing measure the
variance drift is affine, b0_q + b1_q * V, and the vol-of-vol is sigma * V
with leverage correlation rho.  Under the real-world measure two drift
families are supported:

    LN:  dV drift = b0_q + b1 * V
    NL:  dV drift = b0 + b1 * V + b2 * V^2 + b3 / V

and the log-price drift is a0 + a1 * V for both.  RW is the no-dynamics
random-walk benchmark used only in forecasting.

Parameters are partitioned into four disjoint groups for estimation:
theta_sigma (shared between measures), theta_q (pricing measure only),
theta_xp (price drift) and theta_vp (variance drift), following the
limited-information ordering in which theta_vp and theta_xp have
closed-form optima given theta_sigma and theta_q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum


class Family(str, Enum):
    """Drift family tag: random walk, linear or nonlinear variance drift."""

    RW = "RW"
    LN = "LN"
    NL = "NL"


class Measure(str, Enum):
    """Probability measure: physical (P) or pricing (Q)."""

    P = "P"
    Q = "Q"


class DomainViolation(ValueError):
    """Input lies outside the model's state or parameter domain."""


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus the size of its variance drift basis."""

    family: Family

    @property
    def variance_basis_size(self) -> int:
        """Number of basis functions in the variance drift (L + 1)."""
        return {Family.RW: 0, Family.LN: 2, Family.NL: 4}[self.family]

    @property
    def variance_coeff_names(self) -> tuple[str, ...]:
        if self.family is Family.LN:
            return ("b0_q", "b1")
        if self.family is Family.NL:
            return ("b0", "b1", "b2", "b3")
        return ()


RW_SPEC = ModelSpec(Family.RW)
LN_SPEC = ModelSpec(Family.LN)
NL_SPEC = ModelSpec(Family.NL)


@dataclass(frozen=True)
class ParamVector:
    """Full parameter set for one model.

    Units are annualized: drifts are per year, sigma per sqrt(year).
    ``b0``, ``b2``, ``b3`` are meaningful only for the NL family; the LN
    variance drift intercept is ``b0_q`` itself.  ``r`` (short rate) and
    ``c`` (dampening constant) are fixed configuration, never estimated.
    """

    sigma: float
    rho: float
    b0_q: float
    b1_q: float
    a0: float = 0.0
    a1: float = 0.0
    b0: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    b3: float = 0.0
    r: float = 0.05
    c: float = 1e-6

    def validate(self) -> "ParamVector":
        """Check the hard parameter-domain invariants, return self."""
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise DomainViolation(f"sigma must be finite and > 0, got {self.sigma}")
        if not (abs(self.rho) < 1.0):
            raise DomainViolation(f"|rho| must be < 1, got {self.rho}")
        if not (self.b0_q > 0.0):
            raise DomainViolation(f"b0_q must be > 0, got {self.b0_q}")
        if not (self.c > 0.0):
            raise DomainViolation(f"c must be > 0, got {self.c}")
        for name in ("b1_q", "a0", "a1", "b0", "b1", "b2", "b3", "r"):
            if not math.isfinite(getattr(self, name)):
                raise DomainViolation(f"{name} must be finite")
        return self

    def partition(self, spec: ModelSpec) -> dict[str, tuple[str, ...]]:
        """Four-way disjoint partition of the estimated parameter names."""
        if spec.family is Family.LN:
            return {
                "sigma": ("sigma", "rho", "b0_q"),
                "q": ("b1_q",),
                "xp": ("a0", "a1"),
                "vp": ("b1",),
            }
        if spec.family is Family.NL:
            return {
                "sigma": ("sigma", "rho"),
                "q": ("b0_q", "b1_q"),
                "xp": ("a0", "a1"),
                "vp": ("b0", "b1", "b2", "b3"),
            }
        raise DomainViolation("RW has no estimated parameters")

    def variance_coeffs(self, spec: ModelSpec) -> tuple[float, ...]:
        """Coefficients multiplying the variance drift basis, in basis order."""
        if spec.family is Family.LN:
            return (self.b0_q, self.b1)
        if spec.family is Family.NL:
            return (self.b0, self.b1, self.b2, self.b3)
        raise DomainViolation("RW has no variance drift")

    def with_variance_coeffs(self, spec: ModelSpec, coeffs) -> "ParamVector":
        """Return a copy with the free variance drift coefficients replaced.

        For LN only b1 is free (the intercept is pinned to b0_q); for NL
        all four coefficients are free.
        """
        if spec.family is Family.LN:
            (b1,) = coeffs
            return replace(self, b1=float(b1))
        if spec.family is Family.NL:
            b0, b1, b2, b3 = coeffs
            return replace(self, b0=float(b0), b1=float(b1), b2=float(b2), b3=float(b3))
        raise DomainViolation("RW has no variance drift")

    def with_stock_coeffs(self, a0: float, a1: float) -> "ParamVector":
        return replace(self, a0=float(a0), a1=float(a1))


@dataclass(frozen=True)
class State:
    """Joint state: log price x and instantaneous variance v (> 0)."""

    x: float
    v: float

    def validate(self) -> "State":
        if not (self.v > 0.0 and math.isfinite(self.v)):
            raise DomainViolation(f"v must be finite and > 0, got {self.v}")
        if not math.isfinite(self.x):
            raise DomainViolation(f"x must be finite, got {self.x}")
        return self

    def y(self, sigma: float) -> float:
        """Log-variance coordinate y = log(v) / sigma."""
        return math.log(self.v) / sigma
