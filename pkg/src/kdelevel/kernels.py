"""Radial compactly supported kernels and bandwidth schedules.

A kernel on R^k is ``K(x) = c_k * mu(||x||)`` where ``mu`` is a nonincreasing
radial profile vanishing beyond ``support_radius``.  The normalization constant
``c_k`` is computed by radial quadrature when the kernel is built, so any
admissible profile can be registered next to the built-ins.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

Profile = Callable[[np.ndarray], np.ndarray]

THEOREM = "theorem"
COROLLARY = "corollary"
REGIMES = (THEOREM, COROLLARY)


class KernelError(ValueError):
    """Invalid kernel definition or failed kernel quadrature."""


def sphere_area(k: int) -> float:
    """Surface area of the unit sphere in R^k (2 for k=1, 2*pi for k=2)."""
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


def _radial_integral(func: Callable[[float], float], k: int, radius: float) -> float:
    """Integrate a radial function over the ball of given radius in R^k."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                lambda r: func(r) * r ** (k - 1), 0.0, radius,
                epsabs=1e-13, epsrel=1e-12, limit=200,
            )
        except integrate.IntegrationWarning as exc:
            raise KernelError(f"radial quadrature did not converge: {exc}") from exc
    if not math.isfinite(val) or err > 1e-9:
        raise KernelError(f"radial quadrature did not converge (estimate {val}, error {err})")
    return sphere_area(k) * val


@dataclass(frozen=True)
class Kernel:
    """Radial kernel ``x -> c_k * mu(||x||)`` on R^k.

    ``profile`` and ``derivative`` act elementwise on arrays of radii.  The
    derivative is optional; without it the KDE gradient is unavailable.
    """

    name: str
    dimension: int
    profile: Profile
    derivative: Profile | None = None
    support_radius: float = 1.0
    normalization: float = field(init=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise KernelError("kernel dimension must be a positive integer")
        if not self.support_radius > 0:
            raise KernelError("support radius must be positive")
        mass = _radial_integral(
            lambda r: float(self.profile(np.asarray(r, dtype=float))),
            self.dimension, self.support_radius,
        )
        if not mass > 0:
            raise KernelError(f"profile of kernel {self.name!r} has nonpositive integral")
        object.__setattr__(self, "normalization", 1.0 / mass)

    def radial(self, r: np.ndarray) -> np.ndarray:
        """Kernel value as a function of the radius ``||x||``."""
        r = np.asarray(r, dtype=float)
        return self.normalization * np.where(r <= self.support_radius, self.profile(r), 0.0)

    def radial_derivative(self, r: np.ndarray) -> np.ndarray:
        if self.derivative is None:
            raise KernelError(f"kernel {self.name!r} has no registered profile derivative")
        r = np.asarray(r, dtype=float)
        return self.normalization * np.where(r < self.support_radius, self.derivative(r), 0.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate K at points ``x`` of shape (..., k)."""
        x = np.asarray(x, dtype=float)
        return self.radial(np.sqrt(np.sum(x * x, axis=-1)))

    @property
    def l2_norm(self) -> float:
        return kernel_l2_norm(self)

    def check_profile(self, num: int = 10001) -> bool:
        """Check monotonicity on [0, R] and vanishing beyond R on a fine mesh."""
        r = np.linspace(0.0, self.support_radius, num)
        vals = self.profile(r)
        outside = self.radial(np.linspace(self.support_radius * 1.0001, 3 * self.support_radius, 101))
        return bool(np.all(np.diff(vals) <= 1e-15) and np.all(vals >= 0) and np.all(outside == 0))


def _epanechnikov(r):
    return np.clip(1.0 - r * r, 0.0, None)


def _epanechnikov_d(r):
    return np.where(r < 1.0, -2.0 * r, 0.0)


def _biweight(r):
    return np.clip(1.0 - r * r, 0.0, None) ** 2


def _biweight_d(r):
    return np.where(r < 1.0, -4.0 * r * (1.0 - r * r), 0.0)


def _uniform(r):
    return np.where(r <= 1.0, 1.0, 0.0)


_PROFILES: dict[str, tuple[Profile, Profile | None]] = {
    "epanechnikov": (_epanechnikov, _epanechnikov_d),
    "biweight": (_biweight, _biweight_d),
    # not C^1; usable for evaluation and L2 norms only
    "uniform": (_uniform, None),
}


def register_profile(name: str, profile: Profile, derivative: Profile | None = None) -> None:
    """Register a radial profile with support radius 1 under ``name``."""
    _PROFILES[name] = (profile, derivative)


def available_kernels() -> list[str]:
    return sorted(_PROFILES)


def get_kernel(name: str, dimension: int) -> Kernel:
    try:
        profile, deriv = _PROFILES[name]
    except KeyError:
        raise KernelError(f"unknown kernel {name!r}; choose from {available_kernels()}") from None
    return Kernel(name, dimension, profile, deriv)


def kernel_l2_norm(kernel: Kernel) -> float:
    """Return ``int K^2 dx`` over R^k by adaptive radial quadrature."""
    c = kernel.normalization
    return _radial_integral(
        lambda r: (c * float(kernel.profile(np.asarray(r, dtype=float)))) ** 2,
        kernel.dimension, kernel.support_radius,
    )


def alpha_k(k: int) -> int:
    """Oversmoothing exponent: 3 in dimension one, k + 4 otherwise."""
    if k < 1:
        raise ValueError(f"dimension must be >= 1, got {k}")
    return 3 if k == 1 else k + 4


def admissible_gamma_range(k: int, regime: str = THEOREM) -> tuple[float, float]:
    """Open interval of exponents gamma for which h = c n^-gamma meets the rate conditions.

    Log factors are dropped; they do not move the polynomial endpoints.
    """
    if k < 1:
        raise ValueError(f"dimension must be >= 1, got {k}")
    if regime == THEOREM:
        return 1.0 / alpha_k(k), 1.0 / k
    if regime == COROLLARY:
        if k < 2:
            raise ValueError(
                "the fixed-probability limit requires k >= 2: in dimension one the "
                "bandwidth conditions of the level-t result do not permit it"
            )
        return 1.0 / (k + 4), 1.0 / (k + 2)
    raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")


@dataclass(frozen=True)
class BandwidthSchedule:
    """Deterministic bandwidth rule ``h(n) = c * n**(-gamma)``."""

    c: float = 1.0
    gamma: float = 0.2

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("bandwidth prefactor must be positive")

    def __call__(self, n: int) -> float:
        return self.c * float(n) ** (-self.gamma)


@dataclass
class ScheduleReport:
    admissible: bool
    h: float
    gamma_range: tuple[float, float]
    diagnostics: dict[str, float]


def check_schedule(schedule: BandwidthSchedule, k: int, regime: str, n: int) -> ScheduleReport:
    """Evaluate the bandwidth conditions for ``schedule`` at a finite ``n``.

    ``admissible`` only reflects the exponent range; the finite-n values of
    the log-corrected rate quantities are returned for logging.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    lo, hi = admissible_gamma_range(k, regime)
    h = schedule(n)
    logn = math.log(n)
    diag: dict[str, float] = {"gamma": schedule.gamma}
    if regime == THEOREM:
        diag["n h^k / (log n)^16"] = n * h ** k / logn ** 16
        diag["n h^alpha(k) (log n)^2"] = n * h ** alpha_k(k) * logn ** 2
    else:
        diag["n h^(k+2) / log n"] = n * h ** (k + 2) / logn
        diag["n h^(k+4) (log n)^2"] = n * h ** (k + 4) * logn ** 2
    return ScheduleReport(lo < schedule.gamma < hi, h, (lo, hi), diag)


def violated_condition(schedule: BandwidthSchedule, k: int, regime: str) -> str | None:
    """Name the rate condition an inadmissible exponent breaks, or None."""
    lo, hi = admissible_gamma_range(k, regime)
    if schedule.gamma <= lo:
        cond = f"n h^{alpha_k(k)} (log n)^2 -> 0" if regime == THEOREM else f"n h^{k + 4} (log n)^2 -> 0"
        return f"{cond} fails: gamma={schedule.gamma} <= {lo:.6g}"
    if schedule.gamma >= hi:
        cond = f"n h^{k} / (log n)^16 -> inf" if regime == THEOREM else f"n h^{k + 2} / log n -> inf"
        return f"{cond} fails: gamma={schedule.gamma} >= {hi:.6g}"
    return None
