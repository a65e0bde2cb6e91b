"""Dropout-deformed mean-field recursions.

Everything near perfect alignment is computed in the decorrelation variable
m = 1 - c. The channel's decorrelation map

    D(m) = 1 - F(1 - m) = h + (sigma_w^2 / q) [K(1) - K(1 - m)]

is evaluated without the catastrophic cancellation that 1 - F(c) suffers at
small m. Here K(c) = E[phi(u1) phi(u2)] at the variance fixed point. ReLU
uses the arc-cosine closed form. Smooth activations use the Hermite series
K(1) - K(1 - m) = sum_n a_n^2 (1 - (1 - m)^n), or a Price-theorem integral
over c when the series has not converged. Other kinked activations fall
back to direct bivariate quadrature.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

from . import activations as acts
from .activations import ActivationSpec, Smoothness
from .errors import (
    ClassMismatchError,
    DegenerateInput,
    InvalidArgument,
    NoCriticalPoint,
    NoFiniteFixedPoint,
    PhysicsError,
)
from .gauss_kernel import BivariateGaussianSpec, expect1, expect2, price_moments
from .landau import LandauCoefficients

DIVERGENCE = 1e12
DAMPING = 0.5
DAMPED_STEPS = 50
SERIES_ORDER = 200


@dataclass(frozen=True)
class ChannelParams:
    """A microscopic theory point (sigma_w^2, sigma_b^2, rho, phi)."""

    sigma_w_sq: float
    sigma_b_sq: float
    rho: float
    activation: ActivationSpec

    def __post_init__(self):
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", acts.get_activation(self.activation))
        if not (self.sigma_w_sq > 0 and math.isfinite(self.sigma_w_sq)):
            raise InvalidArgument(f"sigma_w_sq must be positive, got {self.sigma_w_sq}")
        if not (self.sigma_b_sq >= 0 and math.isfinite(self.sigma_b_sq)):
            raise InvalidArgument(f"sigma_b_sq must be nonnegative, got {self.sigma_b_sq}")
        if not 0.0 < self.rho <= 1.0:
            raise InvalidArgument(f"keep probability must lie in (0, 1], got {self.rho}")

    def replace(self, **changes) -> "ChannelParams":
        fields = self.to_dict()
        fields["activation"] = self.activation
        fields.update(changes)
        return ChannelParams(**fields)

    def to_dict(self) -> dict:
        return {
            "activation": self.activation.name,
            "sigma_w_sq": self.sigma_w_sq,
            "sigma_b_sq": self.sigma_b_sq,
            "rho": self.rho,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelParams":
        unknown = set(data) - {"activation", "sigma_w_sq", "sigma_b_sq", "rho"}
        if unknown:
            raise InvalidArgument(f"unknown theory-point keys: {sorted(unknown)}")
        try:
            return cls(
                sigma_w_sq=float(data["sigma_w_sq"]),
                sigma_b_sq=float(data.get("sigma_b_sq", 0.0)),
                rho=float(data.get("rho", 1.0)),
                activation=acts.get_activation(data["activation"]),
            )
        except KeyError as exc:
            raise InvalidArgument(f"missing theory-point key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ChannelParams":
        return cls.from_dict(json.loads(text))


class VarianceStatus(str, enum.Enum):
    STABLE = "stable"
    # homogeneous activation, no bias, map exactly q -> q: every q is fixed
    MARGINAL = "marginal"
    # homogeneous activation, no bias, q -> a q with a != 1: correlations are
    # still well defined because they do not depend on the scale
    SCALE_FREE = "scale_free"


@dataclass(frozen=True)
class VarianceFixedPoint:
    q: float
    status: VarianceStatus
    iterations: int


@dataclass(frozen=True)
class FixedPointResult:
    q_star: float
    c_star: float
    m: float
    slope: float
    xi: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class Trajectory:
    depth: np.ndarray
    c: np.ndarray
    m: np.ndarray


# --- variance channel ------------------------------------------------------


def _variance_map(params: ChannelParams) -> Callable[[float], float]:
    act, sw, sb, rho = params.activation, params.sigma_w_sq, params.sigma_b_sq, params.rho
    return lambda q: sw / rho * acts.moment(act, q) + sb


@lru_cache(maxsize=4096)
def variance_fixed_point(
    params: ChannelParams,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    seed: float = 1.0,
) -> VarianceFixedPoint:
    """Solve q = (sigma_w^2 / rho) E[phi^2(sqrt(q) z)] + sigma_b^2.

    Homogeneous activations are solved in closed form. Otherwise a damped
    iteration runs first and hands over to a bracketed root search if it
    has not converged after a few dozen steps.
    """
    if not seed > 0:
        raise InvalidArgument("variance seed must be positive")
    act, sb = params.activation, params.sigma_b_sq
    if act.homogeneous:
        a = params.sigma_w_sq / params.rho * acts.moment(act, 1.0)
        if sb == 0.0:
            status = VarianceStatus.MARGINAL if abs(a - 1.0) <= 1e-12 else VarianceStatus.SCALE_FREE
            return VarianceFixedPoint(float(seed), status, 0)
        if a >= 1.0:
            raise NoFiniteFixedPoint(
                f"{act.name}: sigma_w^2 E[phi^2(z)] / rho = {a:.6g} >= 1 with bias, variance diverges"
            )
        return VarianceFixedPoint(sb / (1.0 - a), VarianceStatus.STABLE, 0)

    vmap = _variance_map(params)
    x = float(seed)
    for k in range(1, min(max_iter, DAMPED_STEPS) + 1):
        y = vmap(x)
        if not math.isfinite(y) or y > DIVERGENCE:
            raise NoFiniteFixedPoint(f"variance iterates exceed {DIVERGENCE:g}")
        # relative test, so a variance sliding to zero is never "converged"
        if abs(y - x) <= tol * x:
            return VarianceFixedPoint(y, VarianceStatus.STABLE, k)
        x = (1.0 - DAMPING) * x + DAMPING * y

    resid = lambda q: vmap(q) - q
    hi = max(x, 1.0)
    while resid(hi) > 0.0:
        hi *= 2.0
        if hi > DIVERGENCE:
            raise NoFiniteFixedPoint(f"variance map stays above the diagonal up to {DIVERGENCE:g}")
    lo = hi
    while resid(lo) <= 0.0:
        lo *= 0.5
        if lo < 1e-300:
            raise DegenerateInput(f"{act.name}: the only variance fixed point is q = 0")
    root, info = brentq(resid, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=max_iter, full_output=True)
    return VarianceFixedPoint(root, VarianceStatus.STABLE, DAMPED_STEPS + info.function_calls)


def qstar(params: ChannelParams, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """The dropout variance fixed point; see ``variance_fixed_point``."""
    return variance_fixed_point(params, tol, max_iter).q


def chi(params: ChannelParams) -> float:
    """sigma_w^2 E[phi'(sqrt(q*) z)^2]."""
    first, _ = price_moments(params.activation, qstar(params))
    return params.sigma_w_sq * first


def curvature_g(params: ChannelParams) -> float:
    """sigma_w^2 q* E[phi''(sqrt(q*) z)^2]; zero for a linear activation."""
    if params.activation.is_kinked:
        raise ClassMismatchError(
            f"{params.activation.name} is kinked: the second derivative of the map at c=1 is not finite"
        )
    q = qstar(params)
    _, second = price_moments(params.activation, q, require_second=True)
    return params.sigma_w_sq * q * second


def dropout_field(params: ChannelParams) -> float:
    """h = (1 - rho) / (rho q) sigma_w^2 E[phi^2], normalized by the propagated variance."""
    return build_channel(params).h


# --- correlation channel ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class Channel:
    """Correlation dynamics of one theory point, in the variable m = 1 - c.

    ``decorrelation(m)`` is D(m) = 1 - F(1 - m) and ``slope(m)`` its
    derivative, which equals F'(c) at c = 1 - m.
    """

    q: float
    h: float
    chi: float
    smoothness: Smoothness
    _decor: Callable[[float], float] = field(repr=False)
    _slope: Callable[[float], float] = field(repr=False)
    g: float | None = None
    kappa: float | None = None
    label: str = ""

    def decorrelation(self, m: float) -> float:
        if not -1e-15 <= m <= 2.0 + 1e-15:
            raise InvalidArgument(f"decorrelation must lie in [0, 2], got {m}")
        m = min(max(m, 0.0), 2.0)
        return self.h + self._decor(m)

    def slope(self, m: float) -> float:
        return self._slope(min(max(m, 0.0), 2.0))

    def correlation(self, c: float) -> float:
        if abs(c) > 1.0:
            raise InvalidArgument(f"correlation must lie in [-1, 1], got {c}")
        return 1.0 - self.decorrelation(1.0 - c)

    def fixed_point(self, seed: float = 0.99, tol: float = 1e-12, max_iter: int = 100_000) -> FixedPointResult:
        """Fixed point c* reached by iterating the (monotone) map from ``seed``.

        The root of D(m) = m is bracketed on the side the flow moves towards
        and polished with Brent's method.
        """
        if abs(seed) > 1.0:
            raise InvalidArgument(f"seed must lie in [-1, 1], got {seed}")
        resid = lambda m: self.decorrelation(m) - m
        m0 = 1.0 - seed
        r0 = resid(m0)
        calls = 1
        lo = hi = None
        if r0 == 0.0:
            m_star = m0
        elif r0 > 0.0:
            # the flow moves towards larger m; D(2) <= 2 guarantees a crossing
            lo, hi = m0, max(2.0 * m0, 1e-12)
            while resid(hi) > 0.0 and hi < 2.0:
                lo, hi = hi, min(2.0 * hi, 2.0)
                calls += 1
            if resid(hi) > 0.0:
                m_star, lo = 2.0, None
        else:
            # the flow moves towards smaller m; D(0) = h >= 0
            hi, lo = m0, 0.5 * m0
            while resid(lo) < 0.0 and lo > 1e-18:
                hi, lo = lo, 0.5 * lo
                calls += 1
            r_lo = resid(lo)
            if r_lo < 0.0:
                m_star, lo = 0.0, None
            elif r_lo == 0.0:
                m_star, lo = lo, None
        converged = True
        if lo is not None:
            m_star, info = brentq(
                resid, lo, hi, xtol=1e-300, rtol=max(min(tol, 1e-12), 1e-15),
                maxiter=max_iter, full_output=True, disp=False,
            )
            calls += info.function_calls
            converged = info.converged
        lam = self.slope(m_star)
        return FixedPointResult(
            q_star=self.q,
            c_star=1.0 - m_star,
            m=m_star,
            slope=lam,
            xi=correlation_length(lam),
            converged=bool(converged),
            iterations=calls,
        )

    def iterate(self, c0: float, depth: int, record: np.ndarray | None = None) -> Trajectory:
        """Apply the map ``depth`` times; keep layers listed in ``record`` (default all)."""
        if abs(c0) > 1.0:
            raise InvalidArgument(f"correlation must lie in [-1, 1], got {c0}")
        if depth < 0:
            raise InvalidArgument("depth must be nonnegative")
        keep = np.arange(depth + 1) if record is None else np.unique(np.asarray(record, dtype=int))
        if keep.size and (keep[0] < 0 or keep[-1] > depth):
            raise InvalidArgument("recorded layers must lie in [0, depth]")
        out = np.empty(keep.size)
        m = 1.0 - c0
        j = 0
        for ell in range(depth + 1):
            if j < keep.size and keep[j] == ell:
                out[j] = m
                j += 1
            if ell < depth:
                m = self.decorrelation(m)
        return Trajectory(keep, 1.0 - out, out)


def correlation_length(slope: float) -> float:
    """xi = -1 / log|lambda|, or infinity when |lambda| >= 1."""
    lam = abs(slope)
    if lam >= 1.0:
        return math.inf
    if lam == 0.0:
        return 0.0
    return -1.0 / math.log(lam)


_GL_X, _GL_W = leggauss(16)


def _series_maps(coeffs: np.ndarray, scale: float):
    a2 = np.asarray(coeffs) ** 2
    n = np.arange(a2.size, dtype=float)
    na2 = (n * a2)[1:]
    n1 = n[1:] - 1.0

    def decor(m):
        if m < 0.5:
            w = -np.expm1(n * math.log1p(-m))
        else:
            w = 1.0 - (1.0 - m) ** n
        return scale * float(np.dot(a2, w))

    def slope(m):
        return scale * float(np.dot(na2, (1.0 - m) ** n1))

    return decor, slope


def _price_maps(act: ActivationSpec, q: float, scale: float):
    """K(1) - K(1 - m) as q times the integral of E[phi'(u1) phi'(u2)] over c."""

    def dk(c):
        return expect2(act.deriv, act.deriv, BivariateGaussianSpec(q, c), breakpoints_f=act.kinks, breakpoints_g=act.kinks)

    def decor(m):
        if m == 0.0:
            return 0.0
        cs = 1.0 - 0.5 * m * (1.0 + _GL_X)
        return scale * q * 0.5 * m * float(sum(w * dk(float(c)) for w, c in zip(_GL_W, cs)))

    def slope(m):
        return scale * q * dk(1.0 - m)

    return decor, slope


def _relu_maps(amp: float):
    return (
        lambda m: amp * acts.relu_decorrelation(m),
        lambda m: amp * acts.relu_decorrelation_slope(m),
    )


@lru_cache(maxsize=4096)
def build_channel(params: ChannelParams) -> Channel:
    act, sw, sb, rho = params.activation, params.sigma_w_sq, params.sigma_b_sq, params.rho
    q = qstar(params)
    e2 = acts.moment(act, q)
    # normalize by the propagated variance; equal to q at a genuine fixed point
    q_next = sw / rho * e2 + sb
    scale = sw / q_next
    h = (1.0 - rho) / rho * sw * e2 / q_next
    first, second = price_moments(act, q)
    g = None if second is None else sw * q * second
    kappa = None
    if act is acts.RELU:
        amp = scale * q / 2.0
        decor, slope = _relu_maps(amp)
        kappa = amp * acts.relu_kappa()
    elif act.is_kinked:
        k1 = expect2(act.value, act.value, BivariateGaussianSpec(q, 1.0), breakpoints_f=act.kinks, breakpoints_g=act.kinks)

        def decor(m, _k1=k1):
            spec = BivariateGaussianSpec(q, 1.0 - m)
            return scale * (_k1 - expect2(act.value, act.value, spec, breakpoints_f=act.kinks, breakpoints_g=act.kinks))

        def slope(m):
            return _fd_slope(decor, m)

    else:
        spec = acts.hermite_coeffs(act, q, SERIES_ORDER)
        a2 = np.asarray(spec.coeffs) ** 2
        if a2[-50:].sum() <= 1e-15 * a2.sum():
            decor, slope = _series_maps(spec.coeffs, scale)
        else:
            decor, slope = _price_maps(act, q, scale)
    return Channel(
        q=q,
        h=h,
        chi=sw * first,
        smoothness=act.smoothness,
        _decor=decor,
        _slope=slope,
        g=g,
        kappa=kappa,
        label=act.name,
    )


def continued_relu_channel(t: float, h: float = 0.0) -> Channel:
    """The normalized ReLU channel D(m) = h + (1 + t) D_ReLU(m) for any (t, h).

    Genuine ReLU networks with bias reach only t <= -h. The other side would
    need a negative bias variance; this continuation is how the ordered side
    of the kinked class is probed.
    """
    if t <= -1.0:
        raise InvalidArgument("t must exceed -1")
    if not h >= 0.0:
        raise InvalidArgument(f"field must be nonnegative, got {h}")
    amp = 1.0 + t
    decor, slope = _relu_maps(amp)
    return Channel(
        q=1.0,
        h=float(h),
        chi=amp,
        smoothness=Smoothness.KINKED,
        _decor=decor,
        _slope=slope,
        kappa=amp * acts.relu_kappa(),
        label="relu-continued",
    )


def _fd_slope(decor: Callable[[float], float], m: float, step: float | None = None) -> float:
    step = min(1e-6, m / 10.0) if step is None else step
    if m <= 0.0 or step <= 0.0:
        step = 1e-6 if step <= 0.0 else step
        return (decor(step) - decor(0.0)) / step
    return (decor(m + step) - decor(m - step)) / (2.0 * step)


def slope_fd(params: ChannelParams, c: float, step: float | None = None) -> float:
    """F'(c) by centered difference with step min(1e-6, m/10), one-sided at c = 1."""
    ch = build_channel(params)
    return _fd_slope(lambda m: ch.decorrelation(m) - ch.h, 1.0 - c, step)


def correlation_map(params: ChannelParams, c: float) -> float:
    """(sigma_w^2 E[phi(u1) phi(u2)] + sigma_b^2) / q* at correlation c."""
    return build_channel(params).correlation(c)


def iterate(params: ChannelParams, c0: float, L: int, record=None) -> Trajectory:
    return build_channel(params).iterate(c0, L, record)


def fixed_point(
    params: ChannelParams, seed: float = 0.99, tol: float = 1e-12, max_iter: int = 100_000
) -> FixedPointResult:
    return build_channel(params).fixed_point(seed, tol, max_iter)


def landau_coefficients(params: ChannelParams) -> LandauCoefficients:
    ch = build_channel(params)
    t = ch.chi - 1.0
    if ch.smoothness is Smoothness.SMOOTH:
        if not ch.g or ch.g <= 0.0:
            raise DegenerateInput(f"{params.activation.name}: g = 0, the quadratic Landau term is absent")
        return LandauCoefficients(t=t, h=ch.h, g=ch.g, smoothness=Smoothness.SMOOTH)
    if ch.kappa is None:
        raise ClassMismatchError(f"no branch coefficient is known for {params.activation.name}")
    return LandauCoefficients(t=t, h=ch.h, kappa=ch.kappa, smoothness=Smoothness.KINKED)


def critical_sigma_w(
    activation: ActivationSpec | str,
    sigma_b_sq: float,
    rho: float = 1.0,
    bracket: tuple[float, float] = (1e-3, 10.0),
    tol: float = 1e-14,
    *,
    chi_target: float = 1.0,
) -> float:
    """sigma_w^2 at which chi = ``chi_target`` (default 1), by bracketed bisection."""
    act = acts.get_activation(activation)

    def excess(sw):
        return chi(ChannelParams(sw, sigma_b_sq, rho, act)) - chi_target

    grid = np.geomspace(bracket[0], bracket[1], 25)
    vals = []
    for sw in grid:
        try:
            vals.append(excess(float(sw)))
        except PhysicsError:
            vals.append(None)
    finite = [v for v in vals if v is not None]
    if any(b < a - 1e-12 for a, b in zip(finite, finite[1:])):
        raise NoCriticalPoint(f"{act.name}: chi is not monotone in sigma_w^2 on {bracket}")
    for k in range(len(grid) - 1):
        lo, hi = vals[k], vals[k + 1]
        if lo is None or hi is None:
            continue
        if lo == 0.0:
            return float(grid[k])
        if lo < 0.0 <= hi:
            return float(brentq(excess, grid[k], grid[k + 1], xtol=tol, rtol=1e-15, maxiter=500))
    raise NoCriticalPoint(
        f"{act.name}: chi - 1 has no sign change for sigma_w^2 in {bracket} "
        f"(sigma_b^2={sigma_b_sq}, rho={rho})"
    )


def two_input_recursion(params: ChannelParams, q0: float, c0: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Layerwise (q_l, c_l) for two inputs of equal variance ``q0`` and correlation ``c0``.

    Masks are independent across inputs, so the diagonal picks up the 1/rho
    factor while the off-diagonal covariance does not.
    """
    if not q0 > 0:
        raise InvalidArgument("q0 must be positive")
    if abs(c0) > 1.0:
        raise InvalidArgument(f"correlation must lie in [-1, 1], got {c0}")
    act, sw, sb, rho = params.activation, params.sigma_w_sq, params.sigma_b_sq, params.rho
    qs, cs = [q0], [c0]
    for _ in range(L):
        q, c = qs[-1], cs[-1]
        qaa = sw / rho * expect1(lambda u: act.value(u) ** 2, q, breakpoints=act.kinks) + sb
        kab = expect2(act.value, act.value, BivariateGaussianSpec(q, c), breakpoints_f=act.kinks, breakpoints_g=act.kinks)
        qs.append(qaa)
        cs.append(min(1.0, max(-1.0, (sw * kab + sb) / qaa)))
    return np.array(qs), np.array(cs)
