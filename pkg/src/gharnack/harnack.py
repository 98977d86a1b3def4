"""Certificates for the three quantitative conclusions: the log-Harnack
inequality, the power-Harnack inequality, and the sup-norm gradient bound.

Both sides of every inequality default to the finite-difference solver (Monte
Carlo noise would drown small slack); the MC estimator is available as a
cross-check channel. Every report carries a tolerance from a two-grid
Richardson difference and never a bare point estimate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .coupling import make_schedule
from .gheat import PdeConfig, solve_g_hjb, solve_with_tolerance
from .model import ModelCoefficients, Payoff, TimeGrid, VolatilityBand
from .scenario import upper_semigroup_mc


class HarnackError(ValueError):
    pass


@dataclass(frozen=True)
class HarnackReport:
    """One inequality certificate: slack = rhs - lhs, pass iff slack >= -tol."""

    kind: str
    x: float | None
    y: float | None
    T: float
    p: float | None
    a: float | None
    q: float | None
    C: float | None
    lhs: float
    rhs: float
    slack: float
    method: str
    tolerance: float
    passed: bool
    alpha: float | None = None
    extras: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        def cell(v):
            return "" if v is None else repr(float(v))

        return ",".join([
            self.kind, cell(self.x), cell(self.y), cell(self.T), cell(self.p),
            cell(self.lhs), cell(self.rhs), cell(self.slack),
            cell(self.tolerance), "1" if self.passed else "0",
        ])

    def to_dict(self) -> dict:
        return asdict(self)


CSV_HEADER = "kind,x,y,T,p,lhs,rhs,slack,tolerance,pass"


# ---------------------------------------------------------------------------
# closed-form constants

def _rate_factor(K: float, sigma_lower: float, T: float) -> tuple[float, float]:
    c_K = K * (2.0 + K + 2.0 / sigma_lower ** 2)
    return c_K, 1.0 - math.exp(-sigma_lower ** 2 * c_K * T)


def log_harnack_constant(K: float, sigma_lower: float, kappa1: float,
                         kappa2: float, T: float) -> float:
    """Coefficient of |x - y|^2 in the log-Harnack bound."""
    if K <= 0.0:
        raise HarnackError("log-Harnack constant needs a declared K > 0")
    c_K, decay = _rate_factor(K, sigma_lower, T)
    return c_K / (2.0 * (kappa1 ** 6 / kappa2 ** 4) * decay)


def log_harnack_constant_generic(coeffs: ModelCoefficients, band: VolatilityBand,
                                 T: float, alpha: float) -> float:
    """Same coefficient for a free admissible alpha: 1/(2 alpha kappa1^2 lam0)."""
    schedule = make_schedule(alpha, coeffs, band, T)
    return 1.0 / (2.0 * alpha * coeffs.kappa1 ** 2 * schedule.lambda0)


def power_threshold(kappa1: float, kappa2: float) -> float:
    """Smallest admissible power (exclusive)."""
    if kappa2 <= kappa1:
        raise HarnackError("power-Harnack threshold needs kappa2 > kappa1")
    return (1.0 + (kappa2 ** 3 - kappa1 * kappa2 ** 2) / kappa1 ** 3) ** 2


def power_harnack_exponent(p: float, K: float, sigma_lower: float,
                           kappa1: float, kappa2: float, T: float) -> float:
    """|x - y|^2 coefficient in the power-Harnack exponential, C = kappa2 - kappa1."""
    c_K, decay = _rate_factor(K, sigma_lower, T)
    sp = math.sqrt(p)
    dk = kappa2 - kappa1
    return sp * (sp - 1.0) * c_K / (4.0 * dk * (kappa1 * (sp - 1.0) - dk) * decay)


def power_harnack_exponent_moment_route(p: float, coeffs: ModelCoefficients,
                                        band: VolatilityBand, T: float) -> float:
    """Alternative coefficient rebuilt from the density moment bound at the
    alpha tying that bound to p. Disagrees with power_harnack_exponent by a
    parameter-dependent factor; reports carry both so the gap stays visible.
    """
    dk = coeffs.kappa2 - coeffs.kappa1
    sp = math.sqrt(p)
    alpha_p = 2.0 * dk / (coeffs.kappa1 * (sp - 1.0))
    schedule = make_schedule(alpha_p, coeffs, band, T)
    k1 = coeffs.kappa1
    return (p - 1.0) * alpha_p * (alpha_p * k1 + 2.0 * dk) / (
        4.0 * dk ** 2 * schedule.lambda0 * (2.0 * alpha_p * k1 + 2.0 * dk))


def gradient_bound(sup_norm: float, kappa1: float, alpha: float,
                   lambda0: float) -> float:
    return sup_norm * 2.0 / (kappa1 * math.sqrt(alpha * lambda0))


def make_alpha_grid(coeffs: ModelCoefficients, n: int = 33) -> np.ndarray:
    """Grid over the admissible open interval, endpoints approached to 1%."""
    cap = 2.0 * coeffs.kappa1 ** 2 / coeffs.kappa2 ** 2
    return np.linspace(0.01 * cap, 0.99 * cap, n)


# ---------------------------------------------------------------------------
# certificates

def check_log_harnack(coeffs: ModelCoefficients, band: VolatilityBand,
                      payoff: Payoff, x: float, y: float, T: float,
                      cfg: PdeConfig, method: str = "pde",
                      mc_grid: TimeGrid | None = None, mc_paths: int = 4096,
                      seed: int = 0) -> HarnackReport:
    """P_T log f(y) <= log P_T f(x) + c |x - y|^2 with the printed constant."""
    if not payoff.strictly_positive:
        raise HarnackError(
            f"payoff {payoff.name!r} has no positive lower bound; "
            "log f is unbounded below"
        )
    coef = log_harnack_constant(coeffs.K, band.sigma_lower, coeffs.kappa1,
                                coeffs.kappa2, T)
    alpha_star = coeffs.kappa1 ** 2 / coeffs.kappa2 ** 2
    coef_generic = log_harnack_constant_generic(coeffs, band, T, alpha_star)

    if method == "pde":
        u_log, tol_log = solve_with_tolerance(coeffs, band, payoff.log(), T, cfg)
        u_f, tol_f = solve_with_tolerance(coeffs, band, payoff, T, cfg)
        lhs = float(u_log(y))
        pf_x = float(u_f(x))
        tolerance = tol_log(y) + tol_f(x) / max(pf_x - tol_f(x),
                                                payoff.lower_bound)
        err_lhs = err_f = 0.0
    elif method == "mc":
        if mc_grid is None:
            raise HarnackError("mc method needs a time grid")
        est_log = upper_semigroup_mc(coeffs, band, payoff.log(), y, mc_grid,
                                     mc_paths, seed)
        est_f = upper_semigroup_mc(coeffs, band, payoff, x, mc_grid, mc_paths,
                                   seed)
        lhs = est_log.value
        pf_x = est_f.value
        err_lhs, err_f = est_log.std_error, est_f.std_error
        tolerance = 3.0 * (err_lhs + err_f / max(pf_x - 3.0 * err_f,
                                                 payoff.lower_bound))
    else:
        raise HarnackError(f"unknown method {method!r}")

    rhs = math.log(pf_x) + coef * (x - y) ** 2
    slack = rhs - lhs
    return HarnackReport(
        kind="log", x=float(x), y=float(y), T=float(T), p=None, a=None, q=None,
        C=None, lhs=lhs, rhs=rhs, slack=slack, method=method,
        tolerance=tolerance, passed=slack >= -tolerance, alpha=alpha_star,
        extras={"constant_printed": coef, "constant_generic_alpha": coef_generic},
    )


def check_log_harnack_grid(coeffs: ModelCoefficients, band: VolatilityBand,
                           payoff: Payoff, xs, ys, T: float,
                           cfg: PdeConfig) -> list[HarnackReport]:
    """Log-Harnack certificates on a grid of (x, y) cells, sharing the two
    semigroup solves across all cells."""
    if not payoff.strictly_positive:
        raise HarnackError(
            f"payoff {payoff.name!r} has no positive lower bound; "
            "log f is unbounded below"
        )
    coef = log_harnack_constant(coeffs.K, band.sigma_lower, coeffs.kappa1,
                                coeffs.kappa2, T)
    alpha_star = coeffs.kappa1 ** 2 / coeffs.kappa2 ** 2
    u_log, tol_log = solve_with_tolerance(coeffs, band, payoff.log(), T, cfg)
    u_f, tol_f = solve_with_tolerance(coeffs, band, payoff, T, cfg)
    reports = []
    for x in np.asarray(xs, dtype=float):
        pf_x = float(u_f(x))
        log_term = math.log(pf_x)
        tol_x = tol_f(x) / max(pf_x - tol_f(x), payoff.lower_bound)
        for y in np.asarray(ys, dtype=float):
            lhs = float(u_log(y))
            rhs = log_term + coef * (x - y) ** 2
            tolerance = tol_log(y) + tol_x
            slack = rhs - lhs
            reports.append(HarnackReport(
                kind="log", x=float(x), y=float(y), T=float(T), p=None,
                a=None, q=None, C=None, lhs=lhs, rhs=rhs, slack=slack,
                method="pde", tolerance=tolerance,
                passed=slack >= -tolerance, alpha=alpha_star,
                extras={"constant_printed": coef}))
    return reports


def check_power_harnack(coeffs: ModelCoefficients, band: VolatilityBand,
                        payoff: Payoff, x: float, y: float, T: float, p: float,
                        cfg: PdeConfig, method: str = "pde",
                        mc_grid: TimeGrid | None = None, mc_paths: int = 4096,
                        seed: int = 0) -> HarnackReport:
    """(P_T f(y))^p <= P_T f^p(x) exp(c_p |x - y|^2) for admissible p."""
    if coeffs.kappa2 <= coeffs.kappa1:
        raise HarnackError(
            "power-Harnack needs kappa2 > kappa1 strictly; the constant's "
            "denominator carries kappa2 - kappa1"
        )
    threshold = power_threshold(coeffs.kappa1, coeffs.kappa2)
    if p <= threshold:
        raise HarnackError(
            f"p = {p:g} is at or below the admissible threshold "
            f"{threshold:.6f} for kappa1={coeffs.kappa1:g}, "
            f"kappa2={coeffs.kappa2:g}"
        )
    if payoff.lower_bound < 0.0:
        raise HarnackError("power-Harnack needs a nonnegative payoff")

    exponent = power_harnack_exponent(p, coeffs.K, band.sigma_lower,
                                      coeffs.kappa1, coeffs.kappa2, T)
    exponent_moment = power_harnack_exponent_moment_route(p, coeffs, band, T)
    blowup = math.exp(exponent * (x - y) ** 2)

    if method == "pde":
        u_f, tol_f = solve_with_tolerance(coeffs, band, payoff, T, cfg)
        u_fp, tol_fp = solve_with_tolerance(coeffs, band, payoff.power(p), T, cfg)
        pf_y = float(u_f(y))
        pfp_x = float(u_fp(x))
        tolerance = p * max(pf_y, 0.0) ** (p - 1.0) * tol_f(y) + blowup * tol_fp(x)
    elif method == "mc":
        if mc_grid is None:
            raise HarnackError("mc method needs a time grid")
        est_f = upper_semigroup_mc(coeffs, band, payoff, y, mc_grid, mc_paths,
                                   seed)
        est_fp = upper_semigroup_mc(coeffs, band, payoff.power(p), x, mc_grid,
                                    mc_paths, seed)
        pf_y, pfp_x = est_f.value, est_fp.value
        tolerance = 3.0 * (p * max(pf_y, 0.0) ** (p - 1.0) * est_f.std_error
                           + blowup * est_fp.std_error)
    else:
        raise HarnackError(f"unknown method {method!r}")

    lhs = pf_y ** p
    rhs = pfp_x * blowup
    slack = rhs - lhs
    return HarnackReport(
        kind="power", x=float(x), y=float(y), T=float(T), p=float(p),
        a=1.0 / (p - 1.0), q=1.0 + math.sqrt(p),
        C=coeffs.kappa2 - coeffs.kappa1, lhs=lhs, rhs=rhs, slack=slack,
        method=method, tolerance=tolerance, passed=slack >= -tolerance,
        extras={"threshold": threshold, "exponent_printed": exponent,
                "exponent_moment_route": exponent_moment},
    )


def check_gradient_estimate(coeffs: ModelCoefficients, band: VolatilityBand,
                            payoff: Payoff, T: float, cfg: PdeConfig,
                            alpha_grid: np.ndarray | None = None) -> HarnackReport:
    """Finite-difference sup-gradient of the semigroup against the envelope
    over alpha of 2 ||f|| / (kappa1 sqrt(alpha lambda0))."""
    if alpha_grid is None:
        alpha_grid = make_alpha_grid(coeffs)
    alpha_grid = np.asarray(alpha_grid, dtype=float)

    u_fine = solve_g_hjb(coeffs, band, payoff, T, cfg)
    u_coarse = solve_g_hjb(coeffs, band, payoff, T, cfg.coarsened())
    lhs = u_fine.max_abs_gradient()
    tolerance = abs(lhs - u_coarse.max_abs_gradient()) + 1e-12

    best_rhs = math.inf
    best_alpha = float(alpha_grid[0])
    for alpha in alpha_grid:
        schedule = make_schedule(float(alpha), coeffs, band, T)
        rhs = gradient_bound(payoff.sup_norm, coeffs.kappa1, float(alpha),
                             schedule.lambda0)
        if rhs < best_rhs:
            best_rhs = rhs
            best_alpha = float(alpha)
    slack = best_rhs - lhs
    return HarnackReport(
        kind="gradient", x=None, y=None, T=float(T), p=None, a=None, q=None,
        C=None, lhs=lhs, rhs=best_rhs, slack=slack, method="pde",
        tolerance=tolerance, passed=lhs <= best_rhs + tolerance,
        alpha=best_alpha,
        extras={"sup_norm": payoff.sup_norm, "n_alpha": int(alpha_grid.size)},
    )


def lipschitz_transport_check(coeffs: ModelCoefficients, band: VolatilityBand,
                              payoff: Payoff, x: float, y: float, T: float,
                              cfg: PdeConfig,
                              alpha: float | None = None) -> HarnackReport:
    """|P_T f(y) - P_T f(x)| against the two-term |x-y| + |x-y|^2 bound."""
    if alpha is None:
        alpha = coeffs.kappa1 ** 2 / coeffs.kappa2 ** 2
    schedule = make_schedule(alpha, coeffs, band, T)
    gap = abs(x - y)
    k1 = coeffs.kappa1
    rhs = payoff.sup_norm * (
        2.0 * gap / (k1 * math.sqrt(alpha * schedule.lambda0))
        + gap ** 2 / (alpha * k1 ** 2 * schedule.lambda0)
    )
    u_f, tol_f = solve_with_tolerance(coeffs, band, payoff, T, cfg)
    lhs = abs(float(u_f(y)) - float(u_f(x)))
    tolerance = tol_f(x) + tol_f(y)
    slack = rhs - lhs
    return HarnackReport(
        kind="lipschitz", x=float(x), y=float(y), T=float(T), p=None, a=None,
        q=None, C=None, lhs=lhs, rhs=rhs, slack=slack, method="pde",
        tolerance=tolerance, passed=slack >= -tolerance, alpha=float(alpha),
    )
