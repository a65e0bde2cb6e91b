"""Gaussian expectations over the standard normal measure Dz.

Every rule is normalized to the unit-variance Gaussian, so that

    int Dz f(z) ~= sum_i w_i f(z_i),    sum_i w_i = 1.

``make_rule`` builds the classic Gauss-Hermite rule. It loses digits once
phi(sqrt(q) z) varies on scales much finer than the node spacing (tanh at
q = 10 is off by ~5e-4 at order 101), so the default engine is a composite
Gauss-Legendre rule on fixed panels of the Gaussian weight. Integrands with
kinks converge only algebraically under either global rule; callers pass the
kink locations as ``breakpoints`` and the panels are then split on them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .errors import ClassMismatchError, InvalidArgument, NumericDomainError

ScalarFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class KernelConfig:
    """Quadrature defaults; override by passing explicit rules."""

    order: int = 101
    panel_nodes: int = 64
    cutoff: float = 12.0  # |z| beyond this carries < 1e-31 of the mass


CONFIG = KernelConfig()


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class BivariateGaussianSpec:
    """Two equal-variance Gaussians with variance ``q`` and correlation ``c``."""

    q: float
    c: float

    def __post_init__(self):
        if not self.q > 0:
            raise InvalidArgument(f"variance must be positive, got {self.q}")
        if abs(self.c) > 1.0:
            raise InvalidArgument(f"correlation must lie in [-1, 1], got {self.c}")


@lru_cache(maxsize=32)
def make_rule(order: int = CONFIG.order) -> QuadratureRule:
    """Gauss-Hermite rule for the unit-variance Gaussian measure."""
    if int(order) != order or order < 2:
        raise InvalidArgument(f"quadrature order must be an integer >= 2, got {order}")
    z, w = hermegauss(int(order))
    w = w / np.sqrt(2.0 * np.pi)
    # the rule is symmetric by construction; enforce it to the last bit
    z = 0.5 * (z - z[::-1])
    w = 0.5 * (w + w[::-1])
    z.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(nodes=z, weights=w, order=int(order))


@lru_cache(maxsize=32)
def make_panel_rule(order: int = CONFIG.panel_nodes) -> QuadratureRule:
    """Composite Gauss-Legendre rule for Dz with ``order`` nodes per panel."""
    if int(order) != order or order < 2:
        raise InvalidArgument(f"quadrature order must be an integer >= 2, got {order}")
    z, w = _panel_rule((), int(order))
    z = 0.5 * (z - z[::-1])
    w = 0.5 * (w + w[::-1])
    z.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(nodes=z, weights=w, order=int(order))


def default_rule() -> QuadratureRule:
    return make_panel_rule(CONFIG.panel_nodes)


@lru_cache(maxsize=8)
def _legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _panel_edges(breaks: Sequence[float], cutoff: float) -> np.ndarray:
    inner = [b for b in breaks if -cutoff < b < cutoff]
    return np.unique(np.concatenate([[-cutoff, -4.0, 0.0, 4.0, cutoff], inner]))


def _panel_rule(breaks: Sequence[float], n: int = CONFIG.panel_nodes) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights for Dz with panels ending on ``breaks``."""
    x, w = _legendre(n)
    edges = _panel_edges(breaks, CONFIG.cutoff)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * x
    weights = half * w * np.exp(-0.5 * nodes**2) / np.sqrt(2.0 * np.pi)
    return nodes.ravel(), weights.ravel()


def _check_finite(values: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != nodes.shape:
        values = np.broadcast_to(values, nodes.shape)
    bad = ~np.isfinite(values)
    if bad.any():
        node = float(np.ravel(nodes)[np.argmax(np.ravel(bad))])
        raise NumericDomainError(f"integrand is not finite at z={node!r}", node=node)
    return values


def expect1(
    f: ScalarFn,
    q: float,
    rule: QuadratureRule | None = None,
    *,
    breakpoints: Sequence[float] = (),
) -> float:
    """Return int Dz f(sqrt(q) z).

    ``breakpoints`` are kink locations of ``f`` in preactivation units; when
    given, the integral switches to Gauss-Legendre panels split at the kinks.
    ``q = 0`` is accepted and gives ``f(0)``.
    """
    if not q >= 0:
        raise InvalidArgument(f"variance must be nonnegative, got {q}")
    if q == 0:
        return float(_check_finite(f(np.zeros(1)), np.zeros(1))[0])
    sq = np.sqrt(q)
    if breakpoints:
        z, w = _panel_rule([b / sq for b in breakpoints])
    else:
        rule = rule or default_rule()
        z, w = rule.nodes, rule.weights
    vals = _check_finite(f(sq * z), z)
    return float(np.dot(w, vals))


def expect2(
    f: ScalarFn,
    g: ScalarFn,
    spec: BivariateGaussianSpec,
    rule: QuadratureRule | None = None,
    *,
    breakpoints_f: Sequence[float] = (),
    breakpoints_g: Sequence[float] = (),
) -> float:
    """Return E[f(u1) g(u2)] for equal-variance correlated Gaussians.

    ``u1 = sqrt(q) z1`` and ``u2 = sqrt(q) (c z1 + sqrt(1 - c^2) z2)``.  The
    aligned and anti-aligned limits collapse to one-dimensional integrals.
    """
    q, c = spec.q, spec.c
    if c == 1.0 or c == -1.0:
        sign = float(c)
        both = list(breakpoints_f) + [sign * b for b in breakpoints_g]
        return expect1(lambda u: f(u) * g(sign * u), q, rule, breakpoints=both)

    sq = np.sqrt(q)
    s = np.sqrt((1.0 - c) * (1.0 + c))
    if not (breakpoints_f or breakpoints_g):
        rule = rule or default_rule()
        z, w = rule.nodes, rule.weights
        u1 = sq * z
        z1, z2 = np.meshgrid(z, z, indexing="ij")
        fv = _check_finite(f(u1), z)
        gv = _check_finite(g(sq * (c * z1 + s * z2)), z2)
        return float(np.dot(w, fv * (gv @ w)))

    # outer panels end on f's kinks and on where g's kinks sit when z2 = 0
    outer_breaks = [b / sq for b in breakpoints_f]
    if c != 0.0:
        outer_breaks += [b / (sq * c) for b in breakpoints_g]
    z1, w1 = _panel_rule(outer_breaks)
    fv = _check_finite(f(sq * z1), z1)

    x, wl = _legendre(CONFIG.panel_nodes)
    cut = CONFIG.cutoff
    base = np.array([-cut, -4.0, 0.0, 4.0, cut])
    kinks = np.array([(b / sq - c * z1) / s for b in breakpoints_g]).T.reshape(len(z1), -1)
    edges = np.sort(np.concatenate([np.broadcast_to(base, (len(z1), 5)), np.clip(kinks, -cut, cut)], axis=1), axis=1)
    lo, hi = edges[:, :-1, None], edges[:, 1:, None]
    half = 0.5 * (hi - lo)
    z2 = 0.5 * (lo + hi) + half * x
    w2 = half * wl * np.exp(-0.5 * z2**2) / np.sqrt(2.0 * np.pi)
    gv = _check_finite(g(sq * (c * z1[:, None, None] + s * z2)), z2)
    inner = np.sum(w2 * gv, axis=(1, 2))
    return float(np.dot(w1, fv * inner))


def price_moments(
    act,
    q: float,
    rule: QuadratureRule | None = None,
    *,
    require_second: bool = False,
) -> tuple[float, float | None]:
    """Return (int Dz phi'(sqrt(q) z)^2, int Dz phi''(sqrt(q) z)^2).

    The second moment is ``None`` for kinked activations, whose second
    derivative is a delta function; asking for it explicitly raises.
    """
    kinks = tuple(getattr(act, "kinks", ()))
    first = expect1(lambda u: act.deriv(u) ** 2, q, rule, breakpoints=kinks)
    if act.second_deriv is None:
        if require_second:
            raise ClassMismatchError(f"{act.name} is kinked; its second Price moment is not finite")
        return first, None
    second = expect1(lambda u: act.second_deriv(u) ** 2, q, rule, breakpoints=kinks)
    return first, second
