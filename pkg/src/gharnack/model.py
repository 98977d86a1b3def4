"""Static problem data: volatility band, coefficients, payoffs, grids.

Everything here is immutable after construction and validated against the
standing assumptions (bounded diffusion, joint Lipschitz coefficients) by
sampling, so downstream solvers can trust the declared constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Coefficient = Callable[[float, np.ndarray], np.ndarray]


class ModelError(ValueError):
    """Invalid model data (bad band, grid, coefficient declaration...)."""


@dataclass(frozen=True)
class VolatilityBand:
    """Uncertainty interval [sigma_lower, sigma_upper] for the volatility."""

    sigma_lower: float
    sigma_upper: float

    def __post_init__(self):
        if not (0.0 < self.sigma_lower <= self.sigma_upper):
            raise ModelError(
                f"band requires 0 < sigma_lower <= sigma_upper, got "
                f"[{self.sigma_lower}, {self.sigma_upper}]"
            )

    @property
    def is_degenerate(self) -> bool:
        return self.sigma_lower == self.sigma_upper


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_N = horizon."""

    horizon: float
    n_steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ModelError(f"n_steps must be >= 1, got {self.n_steps}")
        nodes = np.linspace(0.0, self.horizon, self.n_steps + 1)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps


def g_function(a, band: VolatilityBand):
    """One-dimensional sublinear generator G(a) = (s_up^2 a+ - s_lo^2 a-)/2.

    Accepts scalars or arrays; positively homogeneous, monotone, subadditive.
    """
    a = np.asarray(a, dtype=float)
    up2 = band.sigma_upper ** 2
    lo2 = band.sigma_lower ** 2
    out = 0.5 * (up2 * np.maximum(a, 0.0) - lo2 * np.maximum(-a, 0.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelCoefficients:
    """Drift b, quadratic-variation drift h, diffusion sigma, with declared
    joint Lipschitz constant K and diffusion bounds kappa1 <= sigma <= kappa2.

    Callables take (t, x) with x a scalar or array and broadcast over x.
    """

    b: Coefficient
    h: Coefficient
    sigma: Coefficient
    K: float
    kappa1: float
    kappa2: float

    def __post_init__(self):
        if not (0.0 < self.kappa1 <= self.kappa2):
            raise ModelError(
                f"need 0 < kappa1 <= kappa2, got ({self.kappa1}, {self.kappa2})"
            )
        if self.K < 0.0:
            raise ModelError(f"K must be nonnegative, got {self.K}")


@dataclass(frozen=True)
class Payoff:
    """Terminal functional with declared bounds on the evaluation domain."""

    f: Callable[[np.ndarray], np.ndarray]
    lower_bound: float
    upper_bound: float
    strictly_positive: bool = False
    name: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.lower_bound) and math.isfinite(self.upper_bound)):
            raise ModelError(f"payoff {self.name!r} declares non-finite bounds")
        if self.lower_bound > self.upper_bound:
            raise ModelError(f"payoff {self.name!r} has lower_bound > upper_bound")
        if self.strictly_positive and self.lower_bound <= 0.0:
            raise ModelError(
                f"payoff {self.name!r} is flagged strictly positive but "
                f"lower_bound = {self.lower_bound}"
            )

    @property
    def sup_norm(self) -> float:
        return max(abs(self.lower_bound), abs(self.upper_bound))

    def check_bounds_on(self, xs: np.ndarray, tol: float = 1e-9) -> None:
        """Raise if declared bounds fail on the sampled states."""
        vals = np.asarray(self.f(np.asarray(xs, dtype=float)), dtype=float)
        pad = tol * (1.0 + abs(self.lower_bound) + abs(self.upper_bound))
        if vals.min() < self.lower_bound - pad or vals.max() > self.upper_bound + pad:
            raise ModelError(
                f"payoff {self.name!r} leaves its declared bounds "
                f"[{self.lower_bound}, {self.upper_bound}] on the sampled grid: "
                f"observed [{vals.min()}, {vals.max()}]"
            )

    def log(self) -> "Payoff":
        """Log-transformed payoff; requires a positive lower bound."""
        if not self.strictly_positive:
            raise ModelError(
                f"payoff {self.name!r} has no positive lower bound; "
                "log transform undefined"
            )
        f = self.f
        return Payoff(
            f=lambda x: np.log(f(x)),
            lower_bound=math.log(self.lower_bound),
            upper_bound=math.log(self.upper_bound),
            strictly_positive=False,
            name=f"log({self.name})",
        )

    def power(self, p: float) -> "Payoff":
        """Payoff raised to p >= 1; requires a nonnegative lower bound."""
        if self.lower_bound < 0.0:
            raise ModelError(f"payoff {self.name!r} may be negative; f^p undefined")
        f = self.f
        return Payoff(
            f=lambda x: f(x) ** p,
            lower_bound=self.lower_bound ** p,
            upper_bound=self.upper_bound ** p,
            strictly_positive=self.strictly_positive,
            name=f"{self.name}^{p:g}",
        )


@dataclass(frozen=True)
class ValidationReport:
    """Sampling-based audit of (H1)-(H2) style declarations."""

    worst_lipschitz: float
    declared_K: float
    sigma_min: float
    sigma_max: float
    declared_kappa1: float
    declared_kappa2: float
    passed: bool
    violations: tuple

    def __str__(self):
        status = "pass" if self.passed else "VIOLATION"
        return (
            f"coefficient validation: {status}; worst Lipschitz quotient "
            f"{self.worst_lipschitz:.6g} (declared K={self.declared_K:g}), "
            f"sigma range [{self.sigma_min:.6g}, {self.sigma_max:.6g}] "
            f"(declared [{self.declared_kappa1:g}, {self.declared_kappa2:g}])"
        )


def default_state_domain(x_ref: float, band: VolatilityBand, coeffs: ModelCoefficients,
                         horizon: float) -> tuple[float, float]:
    """Interval covering the mass of simulated paths started near x_ref."""
    half = 6.0 * band.sigma_upper * math.sqrt(horizon) * math.exp(coeffs.K * horizon)
    return (x_ref - half, x_ref + half)


def validate_coefficients(coeffs: ModelCoefficients, domain: tuple[float, float],
                          grid: TimeGrid, samples: int = 512, tol: float = 1e-9,
                          seed: int = 0) -> ValidationReport:
    """Audit (H1)-(H2) by dense grid sampling plus random pairs.

    Sampling-based by design: exact verification is undecidable for general
    closed forms, and the declared constants only need to dominate what the
    solvers will ever see.
    """
    if samples < 2:
        raise ModelError(f"samples must be >= 2, got {samples}")
    lo, hi = domain
    if not lo < hi:
        raise ModelError(f"empty state domain ({lo}, {hi})")

    xs = np.linspace(lo, hi, samples)
    rng = np.random.default_rng(seed)
    xa = rng.uniform(lo, hi, size=samples)
    xb = rng.uniform(lo, hi, size=samples)
    keep = np.abs(xa - xb) > 1e-12 * (hi - lo)
    xa, xb = xa[keep], xb[keep]

    times = grid.nodes[:: max(1, grid.n_steps // 16)]
    worst_lip = 0.0
    sig_min, sig_max = math.inf, -math.inf
    for t in times:
        sig = np.asarray(coeffs.sigma(float(t), xs), dtype=float)
        sig_min = min(sig_min, float(sig.min()))
        sig_max = max(sig_max, float(sig.max()))
        # adjacent-node quotients on the dense grid
        dx = xs[1:] - xs[:-1]
        q = (
            np.abs(np.diff(coeffs.b(float(t), xs)))
            + np.abs(np.diff(coeffs.h(float(t), xs)))
            + np.abs(np.diff(sig))
        ) / dx
        worst_lip = max(worst_lip, float(q.max()))
        # random long-range pairs
        gap = np.abs(xa - xb)
        q2 = (
            np.abs(coeffs.b(float(t), xa) - coeffs.b(float(t), xb))
            + np.abs(coeffs.h(float(t), xa) - coeffs.h(float(t), xb))
            + np.abs(coeffs.sigma(float(t), xa) - coeffs.sigma(float(t), xb))
        ) / gap
        worst_lip = max(worst_lip, float(q2.max()))

    violations = []
    if worst_lip > coeffs.K * (1.0 + tol) + tol:
        violations.append(
            f"Lipschitz quotient {worst_lip:.6g} exceeds declared K={coeffs.K:g}"
        )
    if sig_min < coeffs.kappa1 * (1.0 - tol) - tol:
        violations.append(
            f"sigma dips to {sig_min:.6g} below declared kappa1={coeffs.kappa1:g}"
        )
    if sig_max > coeffs.kappa2 * (1.0 + tol) + tol:
        violations.append(
            f"sigma rises to {sig_max:.6g} above declared kappa2={coeffs.kappa2:g}"
        )
    return ValidationReport(
        worst_lipschitz=worst_lip,
        declared_K=coeffs.K,
        sigma_min=sig_min,
        sigma_max=sig_max,
        declared_kappa1=coeffs.kappa1,
        declared_kappa2=coeffs.kappa2,
        passed=not violations,
        violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# closed-form catalogs (selected by name from the CLI config)

def _broadcast(value, x):
    return np.full_like(np.asarray(x, dtype=float), value, dtype=float)


def make_coefficient(name: str, params: Sequence[float]) -> Coefficient:
    """Build a (t, x) -> array coefficient from the closed-form catalog.

    constant(c); affine(intercept, slope); sine(offset, amplitude, frequency);
    cosine(offset, amplitude, frequency); tanh(offset, amplitude, rate).
    """
    p = [float(v) for v in params]
    if name == "constant":
        (c,) = p
        return lambda t, x: _broadcast(c, x)
    if name == "affine":
        intercept, slope = p
        return lambda t, x: intercept + slope * np.asarray(x, dtype=float)
    if name == "sine":
        offset, amp, freq = p
        return lambda t, x: offset + amp * np.sin(freq * np.asarray(x, dtype=float))
    if name == "cosine":
        offset, amp, freq = p
        return lambda t, x: offset + amp * np.cos(freq * np.asarray(x, dtype=float))
    if name == "tanh":
        offset, amp, rate = p
        return lambda t, x: offset + amp * np.tanh(rate * np.asarray(x, dtype=float))
    raise ModelError(f"unknown coefficient catalog entry {name!r}")


def coefficient_lipschitz(name: str, params: Sequence[float]) -> float:
    """Exact Lipschitz constant of a catalog entry (for config auditing)."""
    p = [float(v) for v in params]
    if name == "constant":
        return 0.0
    if name == "affine":
        return abs(p[1])
    if name in ("sine", "cosine", "tanh"):
        return abs(p[1] * p[2])
    raise ModelError(f"unknown coefficient catalog entry {name!r}")


def make_payoff(name: str, params: Sequence[float] = (),
                domain: tuple[float, float] = (-8.0, 8.0)) -> Payoff:
    """Build a payoff from the named catalog; bounds hold on `domain`."""
    lo, hi = domain
    m = max(abs(lo), abs(hi))
    p = [float(v) for v in params]
    if name == "constant":
        c = p[0] if p else 1.0
        return Payoff(lambda x: _broadcast(c, x), c, c,
                      strictly_positive=c > 0.0, name=f"constant({c:g})")
    if name == "identity":
        return Payoff(lambda x: np.asarray(x, dtype=float), lo, hi, name="identity")
    if name == "quadratic":
        return Payoff(lambda x: np.asarray(x, dtype=float) ** 2, 0.0, m * m,
                      name="quadratic")
    if name == "neg_quadratic":
        return Payoff(lambda x: -np.asarray(x, dtype=float) ** 2, -m * m, 0.0,
                      name="neg_quadratic")
    if name == "abs":
        return Payoff(lambda x: np.abs(np.asarray(x, dtype=float)), 0.0, m,
                      name="abs")
    if name == "call":
        strike = p[0] if p else 0.0
        return Payoff(lambda x: np.maximum(np.asarray(x, dtype=float) - strike, 0.0),
                      0.0, max(hi - strike, 0.0), name=f"call({strike:g})")
    if name == "gauss_bump":
        return Payoff(lambda x: np.exp(-np.asarray(x, dtype=float) ** 2), 0.0, 1.0,
                      name="gauss_bump")
    if name == "shifted_bump":
        c0 = p[0] if p else 0.1
        if c0 < 0.1:
            raise ModelError("shifted_bump requires a floor c0 >= 0.1")
        return Payoff(lambda x: c0 + np.exp(-np.asarray(x, dtype=float) ** 2),
                      c0, c0 + 1.0, strictly_positive=True,
                      name=f"shifted_bump({c0:g})")
    if name == "cosine":
        return Payoff(lambda x: np.cos(np.asarray(x, dtype=float)), -1.0, 1.0,
                      name="cosine")
    if name == "tanh_step":
        return Payoff(lambda x: 0.5 * (1.0 + np.tanh(np.asarray(x, dtype=float))),
                      0.0, 1.0, name="tanh_step")
    raise ModelError(f"unknown payoff catalog entry {name!r}")


PAYOFF_NAMES = (
    "constant", "identity", "quadratic", "neg_quadratic", "abs", "call",
    "gauss_bump", "shifted_bump", "cosine", "tanh_step",
)
