"""Landau normal forms for the two universality classes near c = 1.

Smooth activations:  h + t m - (g/2) m^2 = 0.
Kinked activations:  h + t m - kappa m^{3/2} = 0.

These are the truncated equations of state; nothing here touches the full
recursion.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .activations import Smoothness
from .errors import InvalidArgument, InvalidRegime

INF = math.inf

# (nu_t, beta, theta_rel, gamma, delta, nu_rho, alpha)
EXPONENT_NAMES = ("nu_t", "beta", "theta_rel", "gamma", "delta", "nu_rho", "alpha")
THEORY_EXPONENTS: dict[str, dict[str, Fraction]] = {
    "smooth": dict(zip(EXPONENT_NAMES, map(Fraction, (1, 1, 1, 1, 2, "1/2", -1)))),
    "kinked": dict(zip(EXPONENT_NAMES, map(Fraction, (1, 2, 2, 1, "3/2", "1/3", -3)))),
}
# Reference rows for comparison only; nothing in the package computes them.
REFERENCE_EXPONENTS: dict[str, dict[str, Fraction]] = {
    "spin_glass_sk_mean_field": dict(zip(EXPONENT_NAMES, map(Fraction, ("1/2", 1, 2, 1, 2, "1/4", -1)))),
    "ising_mean_field": dict(zip(EXPONENT_NAMES, map(Fraction, ("1/2", "1/2", 1, 1, 3, "1/3", 0)))),
}


@dataclass(frozen=True)
class LandauCoefficients:
    t: float
    h: float
    smoothness: Smoothness
    g: float | None = None
    kappa: float | None = None

    def __post_init__(self):
        if not self.h >= 0.0:
            raise InvalidArgument(f"field must be nonnegative, got {self.h}")
        if self.smoothness is Smoothness.SMOOTH:
            if self.g is None or self.kappa is not None:
                raise InvalidArgument("smooth coefficients carry g and no kappa")
            if not self.g > 0.0:
                raise InvalidArgument(f"g must be positive, got {self.g}")
        else:
            if self.kappa is None or self.g is not None:
                raise InvalidArgument("kinked coefficients carry kappa and no g")
            if not self.kappa > 0.0:
                raise InvalidArgument(f"kappa must be positive, got {self.kappa}")

    def m(self) -> float:
        if self.smoothness is Smoothness.SMOOTH:
            return m_smooth(self.t, self.h, self.g)
        return m_kinked(self.t, self.h, self.kappa)

    def xi(self) -> float:
        if self.smoothness is Smoothness.SMOOTH:
            return xi_smooth(self.t, self.h, self.g)
        return xi_kinked(self.t, self.h, self.kappa)


def _check_field(h: float) -> None:
    if not h >= 0.0:
        raise InvalidArgument(f"field must be nonnegative, got {h}")


def m_smooth(t: float, h: float, g: float) -> float:
    """Nonnegative root of h + t m - (g/2) m^2 = 0."""
    if not g > 0.0:
        raise InvalidArgument(f"g must be positive, got {g}")
    _check_field(h)
    root = math.sqrt(t * t + 2.0 * g * h)
    if t >= 0.0:
        return (t + root) / g
    # rationalized to avoid cancellation when t < 0
    return 2.0 * h / (root - t)


def cubic_root(u: float, tol: float = 1e-15, max_iter: int = 200) -> float:
    """Unique positive root y of y^3 - u y^2 - 1 = 0.

    Safeguarded Newton on the bracket (max(u, 0), max(u, 0) + 2].
    """
    if not math.isfinite(u):
        raise InvalidArgument(f"u must be finite, got {u}")
    lo = max(u, 0.0)
    hi = lo + 2.0
    y = max(1.0, u + 1.0)
    y = min(y, hi)
    for _ in range(max_iter):
        f = y * y * (y - u) - 1.0
        if f == 0.0:
            return y
        if f > 0.0:
            hi = y
        else:
            lo = y
        df = 3.0 * y * y - 2.0 * u * y
        step = f / df if df > 0.0 else math.inf
        y_new = y - step
        if not lo < y_new < hi:
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= tol * y:
            return y_new
        y = y_new
    return y


def m_kinked(t: float, h: float, kappa: float) -> float:
    """Nonnegative root of h + t m - kappa m^{3/2} = 0."""
    if not kappa > 0.0:
        raise InvalidArgument(f"kappa must be positive, got {kappa}")
    _check_field(h)
    if h == 0.0:
        return 0.0 if t <= 0.0 else (t / kappa) ** 2
    k23 = kappa ** (2.0 / 3.0)
    u = t / (k23 * h ** (1.0 / 3.0))
    # h / kappa would round in the subnormal range; scale the powers separately
    return h ** (2.0 / 3.0) / k23 * cubic_root(u) ** 2


def universal_smooth(t_tilde: float) -> float:
    """sqrt(1 + t~^2) - t~, written to stay accurate for large t~."""
    r = math.hypot(1.0, t_tilde)
    return 1.0 / (r + t_tilde) if t_tilde > 0.0 else r - t_tilde


def universal_kinked(u: float) -> float:
    return cubic_root(u) ** 2


def xi_smooth(t: float, h: float, g: float) -> float:
    """1 / sqrt(t^2 + 2 g h)."""
    if not g > 0.0:
        raise InvalidArgument(f"g must be positive, got {g}")
    _check_field(h)
    rate = math.sqrt(t * t + 2.0 * g * h)
    return INF if rate == 0.0 else 1.0 / rate


def xi_kinked(t: float, h: float, kappa: float) -> float:
    """1 / (-t + (3 kappa / 2) sqrt(m)) on the kinked branch."""
    m = m_kinked(t, h, kappa)
    rate = -t + 1.5 * kappa * math.sqrt(m)
    if rate == 0.0:
        return INF
    if rate < 0.0:
        raise InvalidRegime(f"decay rate {rate:.3g} is negative at t={t}, h={h}")
    return 1.0 / rate


@dataclass(frozen=True)
class FreeEnergy:
    f_on: float
    specific_heat: float
    alpha: int


def onshell_free_energy(coeffs: LandauCoefficients) -> FreeEnergy:
    """Singular potential on the stable zero-field branch and its curvature in t."""
    if coeffs.h != 0.0:
        raise InvalidArgument("the on-shell free energy is defined on the h = 0 branch only")
    t = coeffs.t
    if coeffs.smoothness is Smoothness.SMOOTH:
        g = coeffs.g
        if t <= 0.0:
            return FreeEnergy(0.0, 0.0, -1)
        return FreeEnergy(-2.0 / (3.0 * g * g) * t**3, 4.0 / (g * g) * t, -1)
    k4 = coeffs.kappa**4
    if t <= 0.0:
        return FreeEnergy(0.0, 0.0, -3)
    return FreeEnergy(-(t**5) / (10.0 * k4), 2.0 / k4 * t**3, -3)


def crossover_scale(coeffs: LandauCoefficients) -> float:
    """|t| at which the field and the reduced temperature compete."""
    if coeffs.h == 0.0:
        raise InvalidArgument("the crossover scale needs h > 0")
    if coeffs.smoothness is Smoothness.SMOOTH:
        return math.sqrt(coeffs.g * coeffs.h)
    return coeffs.kappa ** (2.0 / 3.0) * coeffs.h ** (1.0 / 3.0)


# --- scaling collapse ------------------------------------------------------


class CollapseKind(str, enum.Enum):
    SMOOTH = "smooth"
    KINKED = "kinked"


@dataclass(frozen=True)
class CollapseRow:
    t: float
    h: float
    m: float
    t_tilde: float
    m_tilde: float
    predicted: float

    @property
    def residual(self) -> float:
        """Relative deviation from the universal curve."""
        return (self.m_tilde - self.predicted) / self.predicted


@dataclass(frozen=True)
class CollapseResult:
    kind: CollapseKind
    rows: tuple[CollapseRow, ...]
    warnings: tuple[str, ...] = field(default=())

    @property
    def max_abs_residual(self) -> float:
        return max((abs(r.residual) for r in self.rows), default=0.0)

    def write_csv(self, handle, header_comments: Sequence[str] = ()) -> None:
        for line in header_comments:
            handle.write(f"# {line}\n")
        for w in self.warnings:
            handle.write(f"# warning: {w}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", "h", "m", "t_tilde", "m_tilde", "residual"])
        for r in self.rows:
            writer.writerow([repr(float(v)) for v in (r.t, r.h, r.m, r.t_tilde, r.m_tilde, r.residual)])


def _split(points: Iterable[tuple[float, float, float]]):
    kept, warnings = [], []
    for t, h, m in points:
        if h > 0.0:
            kept.append((float(t), float(h), float(m)))
        else:
            warnings.append(f"excluded point t={t!r}, h={h!r}: collapse needs h > 0")
    return kept, tuple(warnings)


def collapse_smooth(points: Iterable[tuple[float, float, float]], g: float) -> CollapseResult:
    """m~ = m sqrt(g / 2h) against t~ = -t / sqrt(2 g h)."""
    if not g > 0.0:
        raise InvalidArgument(f"g must be positive, got {g}")
    kept, warnings = _split(points)
    rows = []
    for t, h, m in kept:
        tt = -t / math.sqrt(2.0 * g * h)
        rows.append(CollapseRow(t, h, m, tt, m * math.sqrt(g / (2.0 * h)), universal_smooth(tt)))
    return CollapseResult(CollapseKind.SMOOTH, tuple(rows), warnings)


def collapse_kinked(points: Iterable[tuple[float, float, float]], kappa: float) -> CollapseResult:
    """m / (h/kappa)^{2/3} against u = t / (kappa^{2/3} h^{1/3})."""
    if not kappa > 0.0:
        raise InvalidArgument(f"kappa must be positive, got {kappa}")
    kept, warnings = _split(points)
    rows = []
    for t, h, m in kept:
        u = t / (kappa ** (2.0 / 3.0) * h ** (1.0 / 3.0))
        rows.append(CollapseRow(t, h, m, u, m / (h / kappa) ** (2.0 / 3.0), universal_kinked(u)))
    return CollapseResult(CollapseKind.KINKED, tuple(rows), warnings)
