"""Statistical models of the video source and of per-classifier bitrates.

Two model families live here:

* :class:`SourceModel` -- a Gamma distribution over the per-video
  motion-vector bitrate (kbps), with its density, CDF (regularized lower
  incomplete gamma), quantile, the shifted-density expectation identity
  used by the closed-form rate expressions, a maximum-likelihood fitter,
  and a histogram KL-divergence diagnostic against empirical samples.
* :class:`RateModel` -- per-classifier linear models mapping the
  motion-vector bitrate to the transmitted bitrate of the 3D and 2D
  temporal streams, fitted by ordinary least squares.

All rates are in kbps throughout. The incomplete gamma is evaluated with
a series expansion for ``beta * x < alpha + 1`` and a Lentz continued
fraction otherwise, targeting ~1e-12 accuracy: the threshold optimizer
differentiates policies through CDF differences, so CDF precision is
load-bearing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSamples,
    InsufficientSamples,
    NegativeArgument,
    NonPositiveSample,
    ZeroVarianceRegressor,
)

# Thresholds at or above this value are treated as unbounded: the CDF is
# taken as exactly 1. Kept finite (rather than inf) so policies stay
# JSON-serializable.
UNBOUNDED_KBPS = 1e30

_MAX_ITER = 600
_EPS = 1e-16


@dataclass(frozen=True)
class SourceModel:
    """Gamma(shape=alpha, rate=beta) model of the motion-vector bitrate."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"shape must be finite and > 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"rate must be finite and > 0, got {self.beta}")

    @property
    def mean(self) -> float:
        return self.alpha / self.beta

    @property
    def variance(self) -> float:
        return self.alpha / (self.beta * self.beta)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "SourceModel":
        return cls(alpha=float(d["alpha"]), beta=float(d["beta"]))


@dataclass(frozen=True)
class RateModel:
    """Linear transmitted-rate models for the two temporal classifiers.

    ``rate = a * r_motion + b`` per stream; the spatial route carries no
    motion vectors, so its cost is a per-video IDR-frame rate and is not
    part of this model. ``r2_*`` hold the coefficient of determination
    reported by the fit, when known.
    """

    a_3d: float
    b_3d: float
    a_2d: float
    b_2d: float
    r2_3d: float | None = None
    r2_2d: float | None = None

    def __post_init__(self):
        for name in ("a_3d", "a_2d"):
            if getattr(self, name) < 0:
                raise ValueError(f"slope {name} must be >= 0")
        for name in ("b_3d", "b_2d"):
            if getattr(self, name) < 0:
                raise ValueError(f"intercept {name} must be >= 0")

    def rate_3d(self, r_motion: float) -> float:
        return self.a_3d * r_motion + self.b_3d

    def rate_2d(self, r_motion: float) -> float:
        return self.a_2d * r_motion + self.b_2d

    def to_dict(self) -> dict:
        d = {"a_3d": self.a_3d, "b_3d": self.b_3d,
             "a_2d": self.a_2d, "b_2d": self.b_2d}
        if self.r2_3d is not None:
            d["r2_3d"] = self.r2_3d
        if self.r2_2d is not None:
            d["r2_2d"] = self.r2_2d
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateModel":
        return cls(
            a_3d=float(d["a_3d"]), b_3d=float(d["b_3d"]),
            a_2d=float(d["a_2d"]), b_2d=float(d["b_2d"]),
            r2_3d=float(d["r2_3d"]) if "r2_3d" in d else None,
            r2_2d=float(d["r2_2d"]) if "r2_2d" in d else None,
        )


# --- special functions ----------------------------------------------------


def _reg_lower_gamma(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x), accurate to ~1e-12.

    Series expansion for x < a + 1, Lentz continued fraction for the
    complement otherwise.
    """
    if x <= 0.0:
        return 0.0
    if x >= UNBOUNDED_KBPS:
        return 1.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        # P(a,x) = x^a e^-x / Gamma(a) * sum_n x^n / (a (a+1) ... (a+n))
        ap = a
        term = 1.0 / a
        total = term
        for _ in range(_MAX_ITER):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return min(1.0, total * math.exp(log_prefix))
    # Q(a,x) via modified Lentz continued fraction; P = 1 - Q.
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return max(0.0, 1.0 - math.exp(log_prefix) * h)


def _digamma(x: float) -> float:
    """Digamma via upward recurrence and the asymptotic expansion."""
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    tail = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (
        1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))))
    return acc + math.log(x) - 0.5 * inv - tail


def _trigamma(x: float) -> float:
    """Trigamma via upward recurrence and the asymptotic expansion."""
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    return acc + inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 - inv2 * (
        1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30))))))


# --- density, CDF, expectation identity ------------------------------------


def gamma_pdf(model: SourceModel, x: float) -> float:
    """Gamma density beta^alpha x^(alpha-1) e^(-beta x) / Gamma(alpha).

    At x = 0 the density is 0 for alpha > 1, beta for alpha == 1 and
    diverges (returns inf) for alpha < 1.
    """
    if x < 0:
        raise NegativeArgument(f"density argument must be >= 0, got {x}")
    a, b = model.alpha, model.beta
    if x == 0.0:
        if a > 1.0:
            return 0.0
        if a == 1.0:
            return b
        return math.inf
    return math.exp(a * math.log(b) + (a - 1.0) * math.log(x)
                    - b * x - math.lgamma(a))


def gamma_cdf(model: SourceModel, x: float) -> float:
    """Gamma CDF: regularized lower incomplete gamma P(alpha, beta*x).

    Exactly 0 at x = 0; values at or above ``UNBOUNDED_KBPS`` yield
    exactly 1.
    """
    if x < 0:
        raise NegativeArgument(f"CDF argument must be >= 0, got {x}")
    if x >= UNBOUNDED_KBPS:
        return 1.0
    return _reg_lower_gamma(model.alpha, model.beta * x)


def gamma_expectation_shift(model: SourceModel, x: float) -> float:
    """(alpha/beta) * f(x; alpha+1, beta), which equals x * f(x; alpha, beta).

    This identity is what turns first-moment integrals of the source into
    plain CDF differences of the shape-shifted distribution.
    """
    if x < 0:
        raise NegativeArgument(f"argument must be >= 0, got {x}")
    shifted = SourceModel(model.alpha + 1.0, model.beta)
    return (model.alpha / model.beta) * gamma_pdf(shifted, x)


def gamma_quantile(model: SourceModel, p: float) -> float:
    """Inverse CDF by bracketing + bisection; p in [0, 1)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"quantile level must be in [0, 1), got {p}")
    if p == 0.0:
        return 0.0
    hi = model.mean + 10.0 * math.sqrt(model.variance) + 1.0
    while gamma_cdf(model, hi) < p:
        hi *= 2.0
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gamma_cdf(model, mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


# --- fitting ----------------------------------------------------------------


def fit_source(samples) -> SourceModel:
    """Maximum-likelihood Gamma fit.

    Method-of-moments initialization, then Newton iterations on the
    profile log-likelihood equation ``log(alpha) - digamma(alpha) = s``
    with ``s = log(mean) - mean(log)``; the rate follows as
    ``alpha / mean``.
    """
    x = np.asarray(list(samples), dtype=np.float64)
    if x.size < 2:
        raise InsufficientSamples(f"need >= 2 samples, got {x.size}")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise NonPositiveSample("all samples must be finite and > 0")
    mean = float(x.mean())
    var = float(x.var())
    if var == 0.0 or float(x.min()) == float(x.max()):
        raise DegenerateSamples("samples have zero variance")
    s = math.log(mean) - float(np.mean(np.log(x)))
    alpha = mean * mean / var
    for _ in range(100):
        g = math.log(alpha) - _digamma(alpha) - s
        gprime = 1.0 / alpha - _trigamma(alpha)
        step = g / gprime
        new = alpha - step
        while new <= 0.0:
            step *= 0.5
            new = alpha - step
        done = abs(new - alpha) <= 1e-12 * alpha
        alpha = new
        if done:
            break
    return SourceModel(alpha=alpha, beta=alpha / mean)


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Simple least squares y = slope*x + intercept; returns (slope, intercept, r2)."""
    xm = x.mean()
    ym = y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise ZeroVarianceRegressor("regressor values are all identical")
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if sst == 0.0 else 1.0 - float(np.sum(resid ** 2)) / sst
    return slope, intercept, r2


def fit_rates(obs_3d, obs_2d) -> RateModel:
    """Fit the two linear transmitted-rate models by ordinary least squares.

    Each argument is a sequence of ``(r_motion, r_observed)`` pairs for
    the corresponding stream. R-squared per stream is recorded on the
    returned model.
    """
    fitted = {}
    for name, obs in (("3d", obs_3d), ("2d", obs_2d)):
        pairs = np.asarray(list(obs), dtype=np.float64)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 2:
            raise InsufficientSamples(
                f"{name} stream needs >= 2 (r_motion, rate) pairs")
        if np.unique(pairs[:, 0]).size < 2:
            raise ZeroVarianceRegressor(
                f"{name} stream needs >= 2 distinct r_motion values")
        fitted[name] = _ols(pairs[:, 0], pairs[:, 1])
    a3, b3, r23 = fitted["3d"]
    a2, b2, r22 = fitted["2d"]
    return RateModel(a_3d=a3, b_3d=b3, a_2d=a2, b_2d=b2, r2_3d=r23, r2_2d=r22)


def kl_divergence_empirical(samples, model: SourceModel, bins: int = 50) -> float:
    """KL(empirical histogram || model bin masses), natural log.

    Equal-width bins over [0, max(samples)]; empty empirical bins
    contribute 0. Model bin masses are CDF differences and are not
    renormalized, so the result stays nonnegative (the model mass over
    the binned range is at most 1).
    """
    x = np.asarray(list(samples), dtype=np.float64)
    if bins < 2:
        raise ValueError(f"need >= 2 bins, got {bins}")
    if x.size < bins:
        raise InsufficientSamples(f"need >= {bins} samples, got {x.size}")
    hi = float(x.max())
    if hi <= 0.0:
        raise DegenerateSamples("all samples are <= 0; nothing to bin")
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    p = counts / x.size
    cdf_at_edges = np.array([gamma_cdf(model, float(e)) for e in edges])
    q = np.maximum(np.diff(cdf_at_edges), 1e-300)
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return max(kl, 0.0)
