"""Classifier-selection policy and the constrained threshold optimizer.

A video is routed to one of three classifiers by its motion-vector
bitrate: the 3D temporal CNN below ``r_low``, the 2D temporal CNN in
``[r_low, r_high)``, and the spatial-only classifier at or above
``r_high``. Under the Gamma source model the expected accuracy and the
expected transmitted bitrate of a threshold pair have closed forms in
the source CDF; :func:`optimize` maximizes expected accuracy subject to
a transmission budget by walking the rate-constraint boundary.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    EmptyBudgetList,
    InfeasibleBudget,
    InvalidAccuracyOrder,
    InvalidThresholds,
    NegativeRate,
)
from .rate_model import (
    UNBOUNDED_KBPS,
    RateModel,
    SourceModel,
    gamma_cdf,
    gamma_quantile,
)

# Numerical slack for feasibility comparisons (kbps).
_FEAS_SLACK = 1e-9


class Route(enum.Enum):
    """Destination classifier for one video."""

    CNN_3D = "3d"
    CNN_2D = "2d"
    SPATIAL = "spatial"


@dataclass(frozen=True)
class SelectorPolicy:
    """Threshold pair plus the (optional) per-classifier accuracies."""

    r_low: float
    r_high: float
    acc_3d: float | None = None
    acc_2d: float | None = None
    acc_sp: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.r_low <= self.r_high):
            raise InvalidThresholds(
                f"need 0 <= r_low <= r_high, got ({self.r_low}, {self.r_high})")
        for name in ("acc_3d", "acc_2d", "acc_sp"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def to_dict(self) -> dict:
        d = {"r_low": self.r_low, "r_high": self.r_high}
        for name in ("acc_3d", "acc_2d", "acc_sp"):
            v = getattr(self, name)
            if v is not None:
                d[name] = v
        return d


def classify_route(policy: SelectorPolicy, r_motion: float) -> Route:
    """Route one video by its motion-vector bitrate.

    Bands are half-open: exactly ``r_low`` routes to the 2D CNN and
    exactly ``r_high`` routes to the spatial classifier.
    """
    if r_motion < 0:
        raise NegativeRate(f"r_motion must be >= 0, got {r_motion}")
    if r_motion < policy.r_low:
        return Route.CNN_3D
    if r_motion < policy.r_high:
        return Route.CNN_2D
    return Route.SPATIAL


@dataclass(frozen=True)
class OptimizationProblem:
    """Everything the closed forms need: source, rates, costs, accuracies, budget."""

    source: SourceModel
    rates: RateModel
    i_sp: float
    acc_3d: float
    acc_2d: float
    acc_sp: float
    r_available: float

    def __post_init__(self):
        if self.r_available <= 0:
            raise ValueError(f"r_available must be > 0, got {self.r_available}")
        if self.i_sp < 0:
            raise ValueError(f"i_sp must be >= 0, got {self.i_sp}")
        for name in ("acc_3d", "acc_2d", "acc_sp"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {
            "source": self.source.to_dict(),
            "rates": self.rates.to_dict(),
            "i_sp": self.i_sp,
            "acc_3d": self.acc_3d,
            "acc_2d": self.acc_2d,
            "acc_sp": self.acc_sp,
            "r_available": self.r_available,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationProblem":
        return cls(
            source=SourceModel.from_dict(d["source"]),
            rates=RateModel.from_dict(d["rates"]),
            i_sp=float(d["i_sp"]),
            acc_3d=float(d["acc_3d"]),
            acc_2d=float(d["acc_2d"]),
            acc_sp=float(d["acc_sp"]),
            r_available=float(d["r_available"]),
        )


@dataclass(frozen=True)
class OptimizationResult:
    """Chosen thresholds with their predicted accuracy and transmitted rate."""

    policy: SelectorPolicy
    predicted_accuracy: float
    predicted_sent_rate: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "r_low": self.policy.r_low,
            "r_high": self.policy.r_high,
            "a_mcnn": self.predicted_accuracy,
            "r_sent": self.predicted_sent_rate,
            "feasible": self.feasible,
        }


@dataclass(frozen=True)
class SweepPoint:
    """One budget of a rate-accuracy sweep."""

    budget: float
    result: OptimizationResult


def _check_thresholds(r_low: float, r_high: float) -> None:
    if not (0.0 <= r_low <= r_high):
        raise InvalidThresholds(
            f"need 0 <= r_low <= r_high, got ({r_low}, {r_high})")


def expected_accuracy(problem: OptimizationProblem,
                      r_low: float, r_high: float) -> float:
    """Expected classification accuracy of a threshold pair.

    Each band contributes its classifier's accuracy weighted by the
    source probability mass it captures; telescoping the three band
    integrals gives
    ``(acc_3d - acc_2d) F(r_low) + (acc_2d - acc_sp) F(r_high) + acc_sp``.
    """
    _check_thresholds(r_low, r_high)
    f_low = gamma_cdf(problem.source, r_low)
    f_high = gamma_cdf(problem.source, r_high)
    return ((problem.acc_3d - problem.acc_2d) * f_low
            + (problem.acc_2d - problem.acc_sp) * f_high
            + problem.acc_sp)


def expected_sent_rate(problem: OptimizationProblem,
                       r_low: float, r_high: float) -> float:
    """Expected transmitted bitrate (kbps) of a threshold pair.

    Linear per-band rates integrate against the source density; the
    first-moment terms reduce to CDF differences of the shape-shifted
    Gamma through the expectation identity, leaving pure CDF evaluations:
    intercept terms against F(.; alpha, beta) and slope terms scaled by
    alpha/beta against F(.; alpha+1, beta), plus the spatial IDR cost.
    """
    _check_thresholds(r_low, r_high)
    src = problem.source
    rates = problem.rates
    shifted = SourceModel(src.alpha + 1.0, src.beta)
    f_low = gamma_cdf(src, r_low)
    f_high = gamma_cdf(src, r_high)
    f1_low = gamma_cdf(shifted, r_low)
    f1_high = gamma_cdf(shifted, r_high)
    k = src.alpha / src.beta
    return ((rates.b_3d - rates.b_2d) * f_low
            + (rates.b_2d - problem.i_sp) * f_high
            + k * (rates.a_3d - rates.a_2d) * f1_low
            + k * rates.a_2d * f1_high
            + problem.i_sp)


def _result(problem: OptimizationProblem, r_low: float, r_high: float,
            feasible: bool = True) -> OptimizationResult:
    policy = SelectorPolicy(r_low, r_high, acc_3d=problem.acc_3d,
                            acc_2d=problem.acc_2d, acc_sp=problem.acc_sp)
    return OptimizationResult(
        policy=policy,
        predicted_accuracy=expected_accuracy(problem, r_low, r_high),
        predicted_sent_rate=expected_sent_rate(problem, r_low, r_high),
        feasible=feasible,
    )


def _better(cand: tuple, best: tuple) -> bool:
    """Deterministic preference: accuracy desc, then r_sent, r_high, r_low asc."""
    acc, rs, rh, rl = cand
    bacc, brs, brh, brl = best
    if acc != bacc:
        return acc > bacc
    return (rs, rh, rl) < (brs, brh, brl)


def _search_upper(problem: OptimizationProblem) -> float:
    """Threshold magnitude beyond which CDFs are saturated for search purposes."""
    shifted = SourceModel(problem.source.alpha + 1.0, problem.source.beta)
    return max(gamma_quantile(problem.source, 1.0 - 1e-8),
               gamma_quantile(shifted, 1.0 - 1e-8))


def _boundary_candidate(problem: OptimizationProblem, r_high: float,
                        budget: float) -> tuple | None:
    """Largest feasible r_low for this r_high, or None if none exists.

    Valid only when the sent rate is nondecreasing in r_low (checked by
    the caller), so the feasible r_low set is an interval [0, r_max].
    """
    if expected_sent_rate(problem, 0.0, r_high) > budget + _FEAS_SLACK:
        return None
    if expected_sent_rate(problem, r_high, r_high) <= budget + _FEAS_SLACK:
        r_low = r_high
    else:
        lo, hi = 0.0, r_high
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if expected_sent_rate(problem, mid, r_high) <= budget + _FEAS_SLACK:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-9 * max(1.0, r_high):
                break
        r_low = lo
    acc = expected_accuracy(problem, r_low, r_high)
    rs = expected_sent_rate(problem, r_low, r_high)
    return (acc, rs, r_high, r_low)


def _exhaustive(problem: OptimizationProblem, budget: float,
                upper: float) -> OptimizationResult:
    """Fallback for non-monotone accuracy/rate orderings: refined grid scan."""
    best = None
    step = upper / 200.0 if upper > 0 else 1.0
    rl_win = rh_win = (0.0, upper)
    for _ in range(6):
        axis_rh = np.arange(rh_win[0], rh_win[1] + step * 0.5, step)
        axis_rl = np.arange(rl_win[0], rl_win[1] + step * 0.5, step)
        for rh in axis_rh:
            rh = float(rh)
            for rl in axis_rl[axis_rl <= rh + 1e-15]:
                rl = float(min(rl, rh))
                rs = expected_sent_rate(problem, rl, rh)
                if rs > budget + _FEAS_SLACK:
                    continue
                acc = expected_accuracy(problem, rl, rh)
                cand = (acc, rs, rh, rl)
                if best is None or _better(cand, best):
                    best = cand
        if best is None or step <= 1e-3:
            break
        # zoom both coordinates around the incumbent, independently
        _, _, brh, brl = best
        rh_win = (max(0.0, brh - 2.0 * step), min(upper, brh + 2.0 * step))
        rl_win = (max(0.0, brl - 2.0 * step), min(upper, brl + 2.0 * step))
        step /= 10.0
    if best is None:
        return _result(problem, 0.0, 0.0, feasible=False)
    return _result(problem, best[3], best[2], feasible=True)


def optimize(problem: OptimizationProblem, *, strict: bool = False,
             tol: float = 1e-3) -> OptimizationResult:
    """Maximize expected accuracy subject to the transmission budget.

    Accuracy is nondecreasing in both thresholds when the accuracies are
    ordered ``acc_3d >= acc_2d >= acc_sp``, so optima sit on the budget
    boundary: for each ``r_high`` on a refinement grid, bisect for the
    largest feasible ``r_low``, keep the best, then refine the ``r_high``
    window down to ``tol`` kbps. Falls back to an exhaustive grid scan
    when the accuracy or rate ordering breaks the monotone structure.

    With an insufficient budget (below the all-spatial cost) the all-
    spatial policy is returned with ``feasible=False``; ``strict=True``
    raises :class:`InfeasibleBudget` instead (and likewise raises
    :class:`InvalidAccuracyOrder` for an unordered accuracy triple).
    """
    budget = problem.r_available
    acc_ordered = problem.acc_3d >= problem.acc_2d >= problem.acc_sp
    if strict and not acc_ordered:
        raise InvalidAccuracyOrder(
            f"need acc_3d >= acc_2d >= acc_sp, got "
            f"({problem.acc_3d}, {problem.acc_2d}, {problem.acc_sp})")
    if problem.i_sp > budget + _FEAS_SLACK:
        if strict:
            raise InfeasibleBudget(
                f"budget {budget} kbps is below the all-spatial cost "
                f"{problem.i_sp} kbps")
        return _result(problem, 0.0, 0.0, feasible=False)

    upper = _search_upper(problem)
    rate_ordered = (problem.rates.a_3d >= problem.rates.a_2d
                    and problem.rates.b_3d >= problem.rates.b_2d)
    if not (acc_ordered and rate_ordered):
        return _exhaustive(problem, budget, upper)

    # Fully unconstrained: route everything to the 3D CNN.
    full_rate = expected_sent_rate(problem, UNBOUNDED_KBPS, UNBOUNDED_KBPS)
    if full_rate <= budget + _FEAS_SLACK:
        return _result(problem, UNBOUNDED_KBPS, UNBOUNDED_KBPS, feasible=True)

    best = (expected_accuracy(problem, 0.0, 0.0), problem.i_sp, 0.0, 0.0)
    step = upper / 400.0
    lo, hi = 0.0, upper
    while True:
        for rh in np.linspace(lo, hi, 21 if lo > 0.0 or hi < upper else 401):
            cand = _boundary_candidate(problem, float(rh), budget)
            if cand is not None and _better(cand, best):
                best = cand
        if step <= tol:
            break
        _, _, brh, _ = best
        lo = max(0.0, brh - step)
        hi = min(upper, brh + step)
        step = (hi - lo) / 20.0 if hi > lo else tol
    return _result(problem, best[3], best[2], feasible=True)


def sweep(problem: OptimizationProblem, budgets, jobs: int = 1) -> list[SweepPoint]:
    """Solve the threshold optimization for each budget, in budget order.

    Budgets must be ascending and positive. Infeasible budgets are
    flagged, not dropped. After the per-budget solves (optionally in
    parallel), a carry-forward pass re-uses an earlier budget's policy
    whenever it is still affordable and strictly better, so the reported
    accuracy column is nondecreasing exactly as the feasible-set nesting
    guarantees for the true optima.
    """
    budgets = [float(b) for b in budgets]
    if not budgets:
        raise EmptyBudgetList("sweep needs at least one budget")
    if any(b <= 0 for b in budgets):
        raise ValueError("all budgets must be > 0")
    if any(b2 < b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be ascending")

    def solve(budget: float) -> OptimizationResult:
        return optimize(replace(problem, r_available=budget))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, budgets))
    else:
        results = [solve(b) for b in budgets]

    points: list[SweepPoint] = []
    incumbent: OptimizationResult | None = None
    for budget, res in zip(budgets, results):
        if (incumbent is not None
                and incumbent.predicted_accuracy > res.predicted_accuracy
                and incumbent.predicted_sent_rate <= budget + _FEAS_SLACK):
            res = incumbent
        if res.feasible and (incumbent is None
                             or res.predicted_accuracy
                             >= incumbent.predicted_accuracy):
            incumbent = res
        points.append(SweepPoint(budget=budget, result=res))
    return points
