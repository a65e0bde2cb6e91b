"""Depth-dependent dropout allocation.

At t = 0 a layer with field h_l decays correlations at a rate
coeff * h_l^p, with p = 1/2 (smooth, coeff = sqrt(2 g)) or p = 1/3
(kinked, coeff = (3/2) kappa^{2/3}). The effective correlation length is the
inverse of the mean rate. Because h^p is concave, a fixed budget is spread
thinnest (shortest xi_eff) by the constant profile and concentrated into the
longest xi_eff by saturating the cap on as few layers as possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .activations import Smoothness, relu_kappa
from .errors import InfeasibleBudget, InvalidArgument, PhysicsError, UnreachableField
from .mft import ChannelParams, dropout_field

INF = math.inf
_SNAP = 1e-9

KINDS = ("none", "constant", "linear_inc", "linear_dec", "step_early", "step_late", "big_step", "double", "triple")


def _cls(cls) -> Smoothness:
    try:
        return Smoothness(cls.value if isinstance(cls, Smoothness) else str(cls).lower())
    except ValueError:
        raise InvalidArgument(f"class must be 'smooth' or 'kinked', got {cls!r}") from None


def kinked_coeff(kappa: float | None = None) -> float:
    """(3/2) kappa^{2/3}; kappa defaults to the ReLU value."""
    kappa = relu_kappa() if kappa is None else kappa
    return 1.5 * kappa ** (2.0 / 3.0)


def smooth_coeff(g: float) -> float:
    """sqrt(2 g)."""
    if not g > 0:
        raise InvalidArgument(f"g must be positive, got {g}")
    return math.sqrt(2.0 * g)


@dataclass(frozen=True)
class ScheduleProfile:
    h_per_layer: tuple[float, ...]
    L: int
    h_bar: float
    h_max: float
    label: str = ""

    def __post_init__(self):
        h = self.h_per_layer
        if self.L < 1 or len(h) != self.L:
            raise InvalidArgument(f"profile has {len(h)} layers, expected L={self.L}")
        if not self.h_max > 0:
            raise InvalidArgument(f"h_max must be positive, got {self.h_max}")
        if any(not (x >= 0.0) for x in h):
            raise InvalidArgument("fields must be nonnegative")
        if any(x > self.h_max * (1 + 1e-12) for x in h):
            raise InfeasibleBudget(f"a layer exceeds the cap h_max={self.h_max}")
        if abs(math.fsum(h) / self.L - self.h_bar) > 1e-12:
            raise InvalidArgument("h_bar must equal the mean of the profile")

    @classmethod
    def from_layers(cls, h: Sequence[float], h_max: float, label: str = "") -> "ScheduleProfile":
        h = tuple(float(x) for x in h)
        return cls(h, len(h), math.fsum(h) / len(h) if h else 0.0, float(h_max), label)

    @property
    def active_fraction(self) -> float:
        return sum(1 for x in self.h_per_layer if x > 0.0) / self.L

    def reach(self, weights: "ReachWeights") -> float:
        """sum_l h_l w_l."""
        if weights.L != self.L:
            raise InvalidArgument("weights and profile have different depths")
        return math.fsum(h * w for h, w in zip(self.h_per_layer, weights.weights))


def _budget_check(h_bar: float, h_max: float, L: int) -> None:
    if L < 1 or int(L) != L:
        raise InvalidArgument(f"depth must be a positive integer, got {L}")
    if not h_max > 0:
        raise InvalidArgument(f"h_max must be positive, got {h_max}")
    if not h_bar >= 0:
        raise InvalidArgument(f"h_bar must be nonnegative, got {h_bar}")
    if h_bar > h_max * (1 + 1e-12):
        raise InfeasibleBudget(f"mean field {h_bar} exceeds the cap {h_max}")


def xi_eff(profile: ScheduleProfile, cls="kinked", coeff: float | None = None) -> float:
    """[ (1/L) sum_l coeff h_l^p ]^-1; infinite for an all-zero profile.

    ``coeff`` defaults to the ReLU value (3/2) kappa^{2/3} for the kinked
    class and must be given for the smooth class.
    """
    c = _cls(cls)
    if any(x < 0 for x in profile.h_per_layer):
        raise InvalidArgument("fields must be nonnegative")
    if c is Smoothness.KINKED:
        p = 1.0 / 3.0
        coeff = kinked_coeff() if coeff is None else coeff
    else:
        if coeff is None:
            raise InvalidArgument("the smooth class needs coeff = sqrt(2 g)")
        p = 0.5
    if not coeff > 0:
        raise InvalidArgument(f"coeff must be positive, got {coeff}")
    # fsum is exactly rounded, hence independent of layer order
    total = math.fsum(x**p for x in profile.h_per_layer if x > 0.0)
    if total == 0.0:
        return INF
    return profile.L / (coeff * total)


def optimal_step(h_bar: float, h_max: float, L: int, label: str = "step_early") -> ScheduleProfile:
    """h_max on the first f L layers (f = h_bar / h_max), one partial layer for the remainder."""
    _budget_check(h_bar, h_max, L)
    n = L * h_bar / h_max
    if abs(n - round(n)) < _SNAP:
        n = float(round(n))
    full = min(int(math.floor(n)), L)
    h = [h_max] * full + [0.0] * (L - full)
    if full < L and n != full:
        h[full] = L * h_bar - full * h_max
        if h[full] < 0.0:
            h[full] = 0.0
    return ScheduleProfile.from_layers(h, h_max, label)


def step_vs_uniform_ratio(h_bar: float, h_max: float, cls="smooth") -> float:
    """xi_eff(saturated step) / xi_eff(constant) at equal budget."""
    if not h_bar > 0:
        raise InvalidArgument("h_bar must be positive")
    _budget_check(h_bar, h_max, 1)
    r = h_max / h_bar
    return math.sqrt(r) if _cls(cls) is Smoothness.SMOOTH else r ** (2.0 / 3.0)


@dataclass(frozen=True)
class ReachWeights:
    weights: tuple[float, ...]
    xi_c: float
    L: int

    def __post_init__(self):
        w = self.weights
        if len(w) != self.L:
            raise InvalidArgument("weights must have length L")
        if w[-1] != 0.0:
            raise InvalidArgument("the last layer has no downstream exposure")
        # strictly decreasing in exact arithmetic; deep layers far from the
        # output round to xi_c, so only an increase is rejected
        if any(b > a for a, b in zip(w, w[1:])):
            raise InvalidArgument("reach weights must decrease with depth")
        if any(x > self.xi_c for x in w):
            raise InvalidArgument("reach weights cannot exceed xi_c")


def reach_weights(L: int, xi_c: float) -> ReachWeights:
    """w_l = xi_c (1 - exp(-(L - l) / xi_c)) for l = 1..L."""
    if L < 1 or int(L) != L:
        raise InvalidArgument(f"depth must be a positive integer, got {L}")
    if not xi_c > 0:
        raise InvalidArgument(f"xi_c must be positive, got {xi_c}")
    ell = np.arange(1, L + 1)
    w = -xi_c * np.expm1(-(L - ell) / xi_c)
    return ReachWeights(tuple(float(x) for x in w), float(xi_c), int(L))


def frontload_lp(h_bar: float, h_max: float, weights: ReachWeights) -> ScheduleProfile:
    """Maximize sum_l h_l w_l under the budget and box constraints.

    The objective is linear, so filling layers in decreasing-weight order up
    to the cap is optimal.
    """
    L = weights.L
    _budget_check(h_bar, h_max, L)
    order = sorted(range(L), key=lambda i: -weights.weights[i])
    step = optimal_step(h_bar, h_max, L).h_per_layer
    h = [0.0] * L
    for rank, i in enumerate(order):
        h[i] = step[rank]
    return ScheduleProfile.from_layers(h, h_max, "frontload")


def schedule_library(kind: str, h_bar: float, h_max: float, L: int) -> ScheduleProfile:
    """Named depth profiles at a fixed mean budget.

    ``big_step`` saturates at 3 h_bar on the first third of the budget.
    ``double`` and ``triple`` are constant profiles at 2 and 3 times h_bar;
    they change the budget, and their cap is raised to fit if needed.
    """
    if kind not in KINDS:
        raise InvalidArgument(f"unknown schedule kind {kind!r}; known: {KINDS}")
    if kind in ("double", "triple"):
        k = 2.0 if kind == "double" else 3.0
        level = k * h_bar
        cap = max(h_max, level)
        _budget_check(level, cap, L)
        return ScheduleProfile.from_layers([level] * L, cap, kind)
    _budget_check(h_bar, h_max, L)
    if kind == "none":
        return ScheduleProfile.from_layers([0.0] * L, h_max, kind)
    if kind == "constant":
        return ScheduleProfile.from_layers([h_bar] * L, h_max, kind)
    if kind in ("linear_inc", "linear_dec"):
        if L < 2:
            raise InvalidArgument("linear profiles need at least two layers")
        if 2.0 * h_bar > h_max * (1 + 1e-12):
            raise InfeasibleBudget(f"linear ramp reaches 2 h_bar = {2 * h_bar} > h_max = {h_max}")
        ramp = [2.0 * h_bar * (ell - 1) / (L - 1) for ell in range(1, L + 1)]
        if kind == "linear_dec":
            ramp.reverse()
        return ScheduleProfile.from_layers(ramp, h_max, kind)
    if kind == "big_step":
        if 3.0 * h_bar > h_max * (1 + 1e-12):
            raise InfeasibleBudget(f"big step needs h_max >= 3 h_bar = {3 * h_bar}")
        # 3 h_bar can round just above an equal cap (3 * 0.1 > 0.3)
        level = h_max if abs(3.0 * h_bar - h_max) <= 1e-12 * h_max else 3.0 * h_bar
        prof = optimal_step(h_bar, level, L, kind) if h_bar > 0 else optimal_step(0.0, h_max, L, kind)
        return ScheduleProfile.from_layers(prof.h_per_layer, h_max, kind)
    prof = optimal_step(h_bar, h_max, L, kind)
    if kind == "step_late":
        return ScheduleProfile.from_layers(prof.h_per_layer[::-1], h_max, kind)
    return prof


def _reach_integral(tau: float, f: float) -> float:
    """int_0^f (1 - exp(-tau (1 - x))) dx, stable for small tau."""
    if tau < 1e-3:
        total, term = 0.0, 1.0
        for k in range(1, 30):
            term *= tau / k
            total += (-1) ** (k + 1) * term * (1.0 - (1.0 - f) ** (k + 1)) / (k + 1)
        return total
    return f - math.exp(-tau) * math.expm1(tau * f) / tau


def reach_ratio(tau: float, f: float) -> float:
    """Reach of the front-loaded step over the constant schedule, continuum form.

    R(tau, f) = (1/f) int_0^f w / int_0^1 w with w(x) = 1 - exp(-tau (1 - x))
    and tau = L / xi_c.
    """
    if not tau > 0:
        raise InvalidArgument(f"tau must be positive, got {tau}")
    if not 0.0 < f <= 1.0:
        raise InvalidArgument(f"active fraction must lie in (0, 1], got {f}")
    return _reach_integral(tau, f) / (f * _reach_integral(tau, 1.0))


def reach_ratio_discrete(tau: float, f: float, L: int) -> float:
    """Same ratio from the discrete weights at depth L."""
    if not 0.0 < f <= 1.0:
        raise InvalidArgument(f"active fraction must lie in (0, 1], got {f}")
    w = reach_weights(L, L / tau)
    step = optimal_step(f, 1.0, L)
    const = ScheduleProfile.from_layers([f] * L, 1.0)
    return step.reach(w) / const.reach(w)


def h_to_keep_prob(h: float, params: ChannelParams, rho_min: float = 1e-3) -> float:
    """Keep probability giving dropout field ``h`` at the other settings of ``params``."""
    if not h >= 0:
        raise InvalidArgument(f"field must be nonnegative, got {h}")
    if h == 0.0:
        return 1.0

    def gap(rho):
        return dropout_field(params.replace(rho=float(rho))) - h

    # scan downward in 1 - rho until the field is exceeded or the fixed point is lost
    prev = 1.0
    for delta in np.geomspace(1e-12, 1.0 - rho_min, 80):
        rho = 1.0 - float(delta)
        try:
            val = gap(rho)
        except PhysicsError:
            break
        if val >= 0.0:
            if val == 0.0:
                return rho
            return float(brentq(gap, rho, prev, xtol=1e-15, rtol=1e-15))
        prev = rho
    raise UnreachableField(f"field {h} is not reached for keep probabilities down to {rho}")
