"""Scenario-measure machinery: admissible volatility controls, path synthesis,
and the sup-over-measures Monte Carlo estimator of the sublinear expectation.

The representation family is infinite; a finite control family estimates the
sup from below (one-sided bias), with the PDE solver as the two-sided anchor.
Common random numbers are shared across controls so the max is stable at a
fixed seed, and every stream is counter-based per path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import streams
from .gheat import PolicyTable
from .model import ModelCoefficients, Payoff, TimeGrid, VolatilityBand


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioControl:
    """Piecewise-constant volatility path, one level per step, inside the band."""

    grid: TimeGrid
    levels: np.ndarray
    band: VolatilityBand

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.shape != (self.grid.n_steps,):
            raise ScenarioError(
                f"need one level per step ({self.grid.n_steps}), got {levels.shape}"
            )
        if levels.min() < self.band.sigma_lower - 1e-12 or \
           levels.max() > self.band.sigma_upper + 1e-12:
            raise ScenarioError("control leaves the volatility band")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    def level(self, j: int, t: float, state: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.levels[j], np.shape(state))


@dataclass(frozen=True)
class FeedbackControl:
    """Closed-loop control: the level at each step is read off a bang-bang
    policy table at the current simulated state."""

    grid: TimeGrid
    policy: PolicyTable

    def level(self, j: int, t: float, state: np.ndarray) -> np.ndarray:
        return self.policy.level_at(t, state)


Control = ScenarioControl | FeedbackControl


@dataclass(frozen=True)
class GBMPath:
    """One synthesized path of (W increments, B, <B>) on a shared grid."""

    grid: TimeGrid
    w_increments: np.ndarray
    b_path: np.ndarray
    qv_path: np.ndarray


@dataclass(frozen=True)
class PathBatch:
    """Vectorized bundle of paths under one control (rows = paths)."""

    grid: TimeGrid
    w: np.ndarray        # (n_paths, n_steps) sqrt(dt)-scaled normals
    levels: np.ndarray   # (n_paths, n_steps) realized levels
    b_path: np.ndarray   # (n_paths, n_steps + 1)
    qv_path: np.ndarray  # (n_paths, n_steps + 1)

    @property
    def n_paths(self) -> int:
        return self.b_path.shape[0]

    def terminal(self) -> np.ndarray:
        return self.b_path[:, -1]


@dataclass(frozen=True)
class EstimateWithError:
    """Sup-over-controls Monte Carlo estimate with the winner's error bar."""

    value: float
    std_error: float
    n_paths: int
    n_controls: int
    best_control_id: int

    def __post_init__(self):
        if self.std_error < 0.0:
            raise ScenarioError("std_error must be nonnegative")


def sample_controls(strategy: str, band: VolatilityBand, grid: TimeGrid,
                    count: int, seed: int,
                    policy: PolicyTable | None = None) -> list[Control]:
    """Finite sub-family of admissible controls.

    constants: evenly spaced constant levels including both endpoints.
    bang_bang: single-switch paths at evenly spaced switch times.
    random: independent per-step uniforms in the band.
    feedback: the closed-loop policy control (needs `policy`), padded with
      constants when count > 1 so the estimator keeps its endpoint anchors.
    """
    if count < 1:
        raise ScenarioError(f"count must be >= 1, got {count}")
    lo, hi = band.sigma_lower, band.sigma_upper
    if band.is_degenerate:
        return [ScenarioControl(grid, np.full(grid.n_steps, lo), band)]

    if strategy == "constants":
        values = np.linspace(lo, hi, count) if count > 1 else np.array([hi])
        return [ScenarioControl(grid, np.full(grid.n_steps, v), band)
                for v in values]
    if strategy == "bang_bang":
        controls = []
        for k in range(1, count + 1):
            switch = grid.horizon * k / (count + 1.0)
            first, second = (lo, hi) if k % 2 == 1 else (hi, lo)
            lv = np.where(grid.nodes[:-1] < switch, first, second)
            controls.append(ScenarioControl(grid, lv, band))
        return controls
    if strategy == "random":
        return [
            ScenarioControl(
                grid, streams.uniform_levels(seed, k, grid.n_steps, lo, hi), band)
            for k in range(count)
        ]
    if strategy == "feedback":
        if policy is None:
            raise ScenarioError("feedback strategy needs a policy table")
        controls: list[Control] = [FeedbackControl(grid, policy)]
        if count > 1:
            controls.extend(sample_controls("constants", band, grid, count - 1, seed))
        return controls
    raise ScenarioError(f"unknown control strategy {strategy!r}")


def _simulate_batch(control: Control, grid: TimeGrid, w: np.ndarray) -> PathBatch:
    n_paths, n_steps = w.shape
    dt = grid.dt
    b = np.zeros((n_paths, n_steps + 1))
    qv = np.zeros((n_paths, n_steps + 1))
    levels = np.empty((n_paths, n_steps))
    state = b[:, 0]
    for j in range(n_steps):
        lv = np.asarray(control.level(j, float(grid.nodes[j]), state), dtype=float)
        levels[:, j] = lv
        b[:, j + 1] = b[:, j] + lv * w[:, j]
        qv[:, j + 1] = qv[:, j] + lv * lv * dt
        state = b[:, j + 1]
    w_view = w.copy()
    for arr in (w_view, levels, b, qv):
        arr.setflags(write=False)
    return PathBatch(grid=grid, w=w_view, levels=levels, b_path=b, qv_path=qv)


def scaled_increments(seed: int, n_paths: int, grid: TimeGrid) -> np.ndarray:
    """sqrt(dt)-scaled standard-normal increments, counter-based per path."""
    return streams.normal_matrix(seed, n_paths, grid.n_steps) * math.sqrt(grid.dt)


def simulate_gbm(control: Control, seed: int) -> GBMPath:
    """Single path under the control; deterministic in (control, seed)."""
    grid = control.grid
    w = scaled_increments(seed, 1, grid)
    batch = _simulate_batch(control, grid, w)
    return GBMPath(grid=grid, w_increments=batch.w[0], b_path=batch.b_path[0],
                   qv_path=batch.qv_path[0])


def upper_expectation_mc(functional: Callable[[PathBatch], np.ndarray],
                         controls: Sequence[Control], n_paths: int,
                         seed: int) -> EstimateWithError:
    """max over controls of the Monte Carlo mean, common random numbers.

    A biased-low estimate of the sublinear expectation (finite control
    family); the reported std_error is the winning control's. For terminal
    functionals a feedback family approaches the sup; for path-dependent
    functionals no such guarantee is claimed.
    """
    if n_paths < 100:
        raise ScenarioError(f"n_paths must be >= 100, got {n_paths}")
    if not controls:
        raise ScenarioError("need at least one control")
    grid = controls[0].grid
    w = scaled_increments(seed, n_paths, grid)
    best_mean = -math.inf
    best_id = 0
    best_se = 0.0
    for k, control in enumerate(controls):
        vals = np.asarray(functional(_simulate_batch(control, grid, w)), dtype=float)
        mean = float(np.mean(vals))
        if mean > best_mean:
            best_mean = mean
            best_id = k
            best_se = float(np.std(vals, ddof=1) / math.sqrt(n_paths))
    return EstimateWithError(value=best_mean, std_error=best_se, n_paths=n_paths,
                             n_controls=len(controls), best_control_id=best_id)


def capacity_mc(event: Callable[[PathBatch], np.ndarray],
                controls: Sequence[Control], n_paths: int,
                seed: int) -> EstimateWithError:
    """Upper capacity of an event: upper expectation of its indicator."""

    def indicator(batch: PathBatch) -> np.ndarray:
        return np.asarray(event(batch), dtype=float)

    est = upper_expectation_mc(indicator, controls, n_paths, seed)
    return EstimateWithError(value=min(max(est.value, 0.0), 1.0),
                             std_error=est.std_error, n_paths=est.n_paths,
                             n_controls=est.n_controls,
                             best_control_id=est.best_control_id)


def terminal_functional(payoff: Payoff) -> Callable[[PathBatch], np.ndarray]:
    def functional(batch: PathBatch) -> np.ndarray:
        return np.asarray(payoff.f(batch.terminal()), dtype=float)

    return functional


def simulate_state_batch(coeffs: ModelCoefficients, control: Control, x0: float,
                         w: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Euler paths of the controlled state equation; feedback levels read the
    simulated state. Returns (n_paths, n_steps + 1)."""
    n_paths, n_steps = w.shape
    dt = grid.dt
    x = np.full((n_paths, n_steps + 1), float(x0))
    for j in range(n_steps):
        t = float(grid.nodes[j])
        xj = x[:, j]
        lv = np.asarray(control.level(j, t, xj), dtype=float)
        gamma = lv * lv
        x[:, j + 1] = (
            xj
            + coeffs.b(t, xj) * dt
            + coeffs.h(t, xj) * gamma * dt
            + coeffs.sigma(t, xj) * lv * w[:, j]
        )
    return x


def upper_semigroup_mc(coeffs: ModelCoefficients, band: VolatilityBand,
                       payoff: Payoff, x0: float, grid: TimeGrid, n_paths: int,
                       seed: int, policy: PolicyTable | None = None,
                       n_controls: int = 5) -> EstimateWithError:
    """Monte Carlo estimate of the semigroup value at x0 (sup over a finite
    control family of E f(X_T)); a feedback policy, when given, joins the
    constant controls."""
    strategy = "feedback" if policy is not None else "constants"
    controls = sample_controls(strategy, band, grid, n_controls, seed,
                               policy=policy)
    if n_paths < 100:
        raise ScenarioError(f"n_paths must be >= 100, got {n_paths}")
    w = scaled_increments(seed, n_paths, grid)
    best_mean = -math.inf
    best_id = 0
    best_se = 0.0
    for k, control in enumerate(controls):
        x = simulate_state_batch(coeffs, control, x0, w, grid)
        vals = np.asarray(payoff.f(x[:, -1]), dtype=float)
        mean = float(np.mean(vals))
        if mean > best_mean:
            best_mean = mean
            best_id = k
            best_se = float(np.std(vals, ddof=1) / math.sqrt(n_paths))
    return EstimateWithError(value=best_mean, std_error=best_se, n_paths=n_paths,
                             n_controls=len(controls), best_control_id=best_id)


# ---------------------------------------------------------------------------
# Young inequality on a finite scenario family

@dataclass(frozen=True)
class YoungReport:
    """Slack of E[g1 g2] <= E[g1 log g1] + log E[e^{g2}] at the sup level."""

    lhs: float
    entropy_term: float
    log_exp_term: float
    slack: float
    passed: bool


def young_check(measures: np.ndarray, g1: np.ndarray, g2: np.ndarray,
                norm_tol: float = 1e-9) -> YoungReport:
    """Verify the sublinear Young inequality on a finite sample space.

    `measures` is row-stochastic (one scenario measure per row over shared
    outcomes); `g1` holds one positive density per scenario, normalized under
    its own measure; `g2` is a table of the same shape or a single outcome
    vector shared by all scenarios.
    """
    P = np.asarray(measures, dtype=float)
    if P.ndim != 2:
        raise ScenarioError("measures must be a (n_measures, n_outcomes) table")
    if P.min() < 0.0 or np.max(np.abs(P.sum(axis=1) - 1.0)) > norm_tol:
        raise ScenarioError("measures must be nonnegative rows summing to 1")
    G1 = np.broadcast_to(np.asarray(g1, dtype=float), P.shape)
    G2 = np.broadcast_to(np.asarray(g2, dtype=float), P.shape)
    if G1.min() <= 0.0:
        raise ScenarioError("g1 must be strictly positive")
    means = np.sum(P * G1, axis=1)
    if np.max(np.abs(means - 1.0)) > norm_tol:
        raise ScenarioError(
            f"g1 must have unit mean under every scenario measure; worst "
            f"|mean-1| = {np.max(np.abs(means - 1.0)):.3g}"
        )
    lhs = float(np.max(np.sum(P * G1 * G2, axis=1)))
    entropy = float(np.max(np.sum(P * G1 * np.log(G1), axis=1)))
    log_exp = float(np.log(np.max(np.sum(P * np.exp(G2), axis=1))))
    slack = entropy + log_exp - lhs
    return YoungReport(lhs=lhs, entropy_term=entropy, log_exp_term=log_exp,
                       slack=slack, passed=slack >= -1e-12)


def random_young_trial(seed: int, n_measures: int = 3, n_outcomes: int = 4,
                       g2_scale: float = 1.0):
    """Random normalized (measures, g1, g2) instance for randomized checks."""
    rng = np.random.default_rng(seed)
    P = rng.uniform(0.05, 1.0, size=(n_measures, n_outcomes))
    P /= P.sum(axis=1, keepdims=True)
    g1 = rng.uniform(0.05, 3.0, size=(n_measures, n_outcomes))
    g1 /= np.sum(P * g1, axis=1, keepdims=True)
    g2 = rng.normal(0.0, g2_scale, size=(n_measures, n_outcomes))
    return P, g1, g2
