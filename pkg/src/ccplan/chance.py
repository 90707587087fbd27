"""Gaussian target model and the chance constraint on ego-target separation.

The separation event is ``|x_tgt - x + y_tgt - y| >= d_min`` with the target
coordinates independent Gaussians.  Two deterministic reformulations are
provided:

``paper``
    The two-sided band ``lower <= x + y <= upper`` with
    ``upper = mu_x + mu_y + d_min + s * q(alpha/2)`` and
    ``lower = mu_x + mu_y - d_min + s * q(1 - alpha/2)``, where
    ``s = sqrt(sigma_x**2 + sigma_y**2)`` and ``q`` is the standard normal
    quantile.
``separation``
    A one-sided bound keeping the ego behind (or ahead of) the target with
    probability ``alpha``: ``x + y <= mu_x + mu_y - d_min + s * q(1 - alpha)``
    when trailing.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np
from scipy.special import erfc

from .errors import DomainError, ShapeError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Acklam's rational approximation of the normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)  # fmt: skip
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)  # fmt: skip
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)  # fmt: skip
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)  # fmt: skip
_P_LOW = 0.02425


def normal_cdf(z):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)


def _quantile_lower(p):
    # p in (0, 0.5]
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        z = num / den
    else:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        z = num / den
    # one Newton step against the erfc-based CDF
    e = 0.5 * math.erfc(-z / _SQRT2) - p
    z -= e / (_INV_SQRT_2PI * math.exp(-0.5 * z * z))
    return z


def normal_quantile(p):
    """Standard normal quantile ``z`` with ``Phi(z) = p``, for ``0 < p < 1``.

    Accepts scalars or arrays.  The upper half is obtained by symmetry from
    the lower half, so ``normal_quantile(p) == -normal_quantile(1 - p)``.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    for k, pk in enumerate(flat):
        if pk <= 0.5:
            out[k] = _quantile_lower(pk)
        else:
            out[k] = -_quantile_lower(1.0 - pk)
    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


class ChanceMode(str, Enum):
    PAPER = "paper"
    SEPARATION = "separation"


@dataclass(frozen=True)
class ChanceParams:
    alpha: float = 0.95
    d_min: float = 5.0
    mode: ChanceMode = ChanceMode.PAPER

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.0:
            raise DomainError(f"chance.alpha must lie in (0.5, 1), got {self.alpha}")
        if not self.d_min > 0:
            raise DomainError(f"d_min must be positive, got {self.d_min}")
        object.__setattr__(self, "mode", ChanceMode(self.mode))


@dataclass(frozen=True, eq=False)
class TargetModel:
    """Gaussian target positions: means sampled uniformly on ``[0, horizon_T]``."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: float
    sigma_y: float
    horizon_T: float

    def __post_init__(self):
        mx = np.asarray(self.mu_x, dtype=float)
        my = np.asarray(self.mu_y, dtype=float)
        if mx.ndim != 1 or mx.shape != my.shape or mx.size < 2:
            raise ShapeError("target.mu_x and target.mu_y must be equal-length 1-D arrays (>= 2)")
        if not (np.all(np.isfinite(mx)) and np.all(np.isfinite(my))):
            raise DomainError("target mean trajectory must be finite")
        if not (self.sigma_x >= 0 and self.sigma_y >= 0):
            raise DomainError("target sigmas must be >= 0")
        if not self.horizon_T > 0:
            raise DomainError("horizon_T must be positive")
        mx.setflags(write=False)
        my.setflags(write=False)
        object.__setattr__(self, "mu_x", mx)
        object.__setattr__(self, "mu_y", my)

    @property
    def times(self):
        return np.linspace(0.0, self.horizon_T, self.mu_x.size)

    @property
    def sigma(self):
        return math.hypot(self.sigma_x, self.sigma_y)

    def mean_at(self, t):
        """Linearly interpolated mean position at times ``t``."""
        tt = self.times
        return np.interp(t, tt, self.mu_x), np.interp(t, tt, self.mu_y)

    def on_grid(self, times):
        """Model with means resampled at the (uniform, zero-based) ``times``."""
        mx, my = self.mean_at(times)
        return TargetModel(mx, my, self.sigma_x, self.sigma_y, float(times[-1]))


def det_equiv_bounds(mu_x, mu_y, sigma_x, sigma_y, cp):
    """Two-sided band ``(lower, upper)`` on ``x + y`` (scalars or arrays)."""
    s = np.hypot(sigma_x, sigma_y)
    mu = np.asarray(mu_x, dtype=float) + np.asarray(mu_y, dtype=float)
    upper = mu + cp.d_min + s * normal_quantile(cp.alpha / 2.0)
    lower = mu - cp.d_min + s * normal_quantile(1.0 - cp.alpha / 2.0)
    if np.ndim(upper) == 0:
        return float(lower), float(upper)
    return lower, upper


def separation_bound(mu_x, mu_y, sigma_x, sigma_y, cp, trailing=True):
    """One-sided bound on ``x + y``: an upper bound when trailing, lower when leading."""
    s = np.hypot(sigma_x, sigma_y)
    mu = np.asarray(mu_x, dtype=float) + np.asarray(mu_y, dtype=float)
    back = cp.d_min - s * normal_quantile(1.0 - cp.alpha)
    out = mu - back if trailing else mu + back
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class McEstimate:
    per_node: np.ndarray
    minimum: float
    n_samples: int


def chance_satisfaction_mc(ego_sum, tm, cp, n_samples=100_000, seed=0):
    """Monte-Carlo estimate of ``P(|x_tgt - x + y_tgt - y| >= d_min)`` per node.

    ``ego_sum`` holds ``x + y`` of the ego at each node and must align with
    the target model's mean samples.
    """
    ego_sum = np.asarray(ego_sum, dtype=float)
    if ego_sum.shape != tm.mu_x.shape:
        raise ShapeError(f"ego_sum has {ego_sum.size} nodes, target model has {tm.mu_x.size}")
    if n_samples < 1000:
        raise DomainError(f"n_samples must be >= 1000, got {n_samples}")
    rng = np.random.default_rng(seed)
    gap = tm.mu_x + tm.mu_y - ego_sum
    per_node = np.empty(gap.size)
    for i, g in enumerate(gap):
        xi = rng.standard_normal((2, n_samples))
        k = g + tm.sigma_x * xi[0] + tm.sigma_y * xi[1]
        per_node[i] = np.count_nonzero(np.abs(k) >= cp.d_min) / n_samples
    return McEstimate(per_node, float(per_node.min()), int(n_samples))
