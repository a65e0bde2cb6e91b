"""Activation registry, the ReLU arc-cosine machinery, and Hermite spectra."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erf, gammaln

from .errors import DegenerateInput, InsufficientData, InvalidArgument
from .gauss_kernel import QuadratureRule, expect1

ScalarFn = Callable[[np.ndarray], np.ndarray]

HERMITE_CAP = 200


class Smoothness(str, enum.Enum):
    SMOOTH = "smooth"
    KINKED = "kinked"


@dataclass(frozen=True)
class ActivationSpec:
    """A pointwise nonlinearity and what the theory needs to know about it.

    ``kinks`` lists the points where the slope jumps. ``homogeneous`` marks
    positively homogeneous maps (phi(a x) = a phi(x) for a > 0), whose
    correlation map does not depend on the variance scale. ``parity`` is
    ``"odd"``, ``"even"`` or ``None``.
    """

    name: str
    value: ScalarFn
    deriv: ScalarFn
    second_deriv: ScalarFn | None
    smoothness: Smoothness
    kinks: tuple[float, ...] = ()
    parity: str | None = None
    homogeneous: bool = False
    notes: str = field(default="", compare=False)

    def __post_init__(self):
        if self.smoothness is Smoothness.KINKED and self.second_deriv is not None:
            raise InvalidArgument(f"{self.name}: kinked activations carry no second derivative")
        if self.smoothness is Smoothness.SMOOTH and self.second_deriv is None:
            raise InvalidArgument(f"{self.name}: smooth activations need a second derivative")
        if self.parity not in (None, "odd", "even"):
            raise InvalidArgument(f"{self.name}: parity must be 'odd', 'even' or None")

    def __call__(self, x):
        return self.value(x)

    @property
    def is_kinked(self) -> bool:
        return self.smoothness is Smoothness.KINKED


def _relu(x):
    return np.maximum(x, 0.0)


def _step(x):
    return (np.asarray(x) > 0).astype(float)


def _sech2(x):
    return 1.0 - np.tanh(x) ** 2


def _tanh_dd(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.asarray(x) ** 2)


def _cdf(x):
    return 0.5 * (1.0 + erf(np.asarray(x) / math.sqrt(2.0)))


def _gelu(x):
    return x * _cdf(x)


def _gelu_d(x):
    return _cdf(x) + x * _pdf(x)


def _gelu_dd(x):
    return (2.0 - np.asarray(x) ** 2) * _pdf(x)


RELU = ActivationSpec("relu", _relu, _step, None, Smoothness.KINKED, kinks=(0.0,), homogeneous=True)
TANH = ActivationSpec("tanh", np.tanh, _sech2, _tanh_dd, Smoothness.SMOOTH, parity="odd")
GELU = ActivationSpec("gelu", _gelu, _gelu_d, _gelu_dd, Smoothness.SMOOTH)
IDENTITY = ActivationSpec(
    "identity",
    lambda x: np.asarray(x, dtype=float),
    lambda x: np.ones_like(np.asarray(x, dtype=float)),
    lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    Smoothness.SMOOTH,
    parity="odd",
    homogeneous=True,
)

_REGISTRY: dict[str, ActivationSpec] = {a.name: a for a in (RELU, TANH, GELU, IDENTITY)}


def register(spec: ActivationSpec, *, overwrite: bool = False) -> None:
    """Add a user activation; its declared smoothness class is trusted."""
    if spec.name in _REGISTRY and not overwrite:
        raise InvalidArgument(f"activation {spec.name!r} is already registered")
    _REGISTRY[spec.name] = spec


def get_activation(name: str | ActivationSpec) -> ActivationSpec:
    if isinstance(name, ActivationSpec):
        return name
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        raise InvalidArgument(f"unknown activation {name!r}; known: {sorted(_REGISTRY)}") from None


def available() -> list[str]:
    return sorted(_REGISTRY)


def moment(act: ActivationSpec, q: float, rule: QuadratureRule | None = None) -> float:
    """int Dz phi(sqrt(q) z)^2."""
    return expect1(lambda u: act.value(u) ** 2, q, rule, breakpoints=act.kinks)


# --- ReLU closed forms -----------------------------------------------------


def relu_map(c: float) -> float:
    """Arc-cosine kernel (1/pi)[sqrt(1 - c^2) + (pi - arccos c) c]."""
    if abs(c) > 1.0:
        raise InvalidArgument(f"correlation must lie in [-1, 1], got {c}")
    return (math.sqrt((1.0 - c) * (1.0 + c)) + (math.pi - math.acos(c)) * c) / math.pi


def relu_map_slope(c: float) -> float:
    """d relu_map / dc = (pi - arccos c) / pi."""
    if abs(c) > 1.0:
        raise InvalidArgument(f"correlation must lie in [-1, 1], got {c}")
    return (math.pi - math.acos(c)) / math.pi


def relu_decorrelation(m: float) -> float:
    """1 - relu_map(1 - m), evaluated without cancelling the O(sqrt m) terms."""
    if not 0.0 <= m <= 2.0:
        raise InvalidArgument(f"decorrelation must lie in [0, 2], got {m}")
    theta = 2.0 * math.asin(math.sqrt(0.5 * m))
    return m + (theta * (1.0 - m) - math.sqrt(m * (2.0 - m))) / math.pi


def relu_decorrelation_slope(m: float) -> float:
    """d/dm of relu_decorrelation, equal to relu_map_slope(1 - m)."""
    theta = 2.0 * math.asin(math.sqrt(0.5 * m))
    return 1.0 - theta / math.pi


def relu_kappa() -> float:
    """Coefficient of the m^{3/2} branch term: 2 sqrt(2) / (3 pi)."""
    return 2.0 * math.sqrt(2.0) / (3.0 * math.pi)


def relu_hermite_closed(n: int) -> float:
    """Exact orthonormal Hermite coefficient of unscaled ReLU."""
    if n < 0:
        raise InvalidArgument("n must be nonnegative")
    if n == 0:
        return _INV_SQRT_2PI
    if n == 1:
        return 0.5
    if n % 2:
        return 0.0
    k = n // 2
    # (2k-3)!! = (2k-2)! / (2^{k-1} (k-1)!)
    log_dfact = gammaln(2 * k - 1) - (k - 1) * math.log(2.0) - gammaln(k)
    log_mag = log_dfact - 0.5 * (math.log(2.0 * math.pi) + gammaln(2 * k + 1))
    return (-1.0) ** (k - 1) * math.exp(log_mag)


# --- Hermite spectra -------------------------------------------------------


@dataclass(frozen=True)
class HermiteSpectrum:
    coeffs: np.ndarray
    q: float
    sum_sq: float
    mean_degree: float
    name: str = ""

    @property
    def n_max(self) -> int:
        return len(self.coeffs) - 1

    def kernel(self, c: float) -> float:
        """sum_n a_n^2 c^n, the channel's unnormalized two-point function."""
        return float(np.polynomial.polynomial.polyval(c, self.coeffs**2))


def _spectrum(coeffs: np.ndarray, q: float, name: str) -> HermiteSpectrum:
    coeffs = np.asarray(coeffs, dtype=float)
    coeffs.setflags(write=False)
    sq = coeffs**2
    total = float(sq.sum())
    mean_deg = float(np.dot(np.arange(len(sq)), sq) / total) if total > 0 else 0.0
    return HermiteSpectrum(coeffs, float(q), total, mean_deg, name)


def _psi_table(z: np.ndarray, sqrt_w: np.ndarray, n_max: int) -> np.ndarray:
    """Rows h_n(z) * sqrt_w via the orthonormal three-term recurrence."""
    out = np.empty((n_max + 1, z.size))
    out[0] = sqrt_w
    if n_max >= 1:
        out[1] = z * sqrt_w
    for n in range(1, n_max):
        out[n + 1] = (z * out[n] - math.sqrt(n) * out[n - 1]) / math.sqrt(n + 1)
    return out


def _hermite_panels(n_max: int, breaks: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
    # the integrand f h_n e^{-z^2/2} lives on |z| < 2 sqrt(n) + a few
    cut = 12.0 + 2.0 * math.sqrt(n_max)
    edges = np.arange(-cut, cut + 0.25, 0.5)
    inner = [b for b in breaks if -cut < b < cut]
    edges = np.unique(np.concatenate([edges, inner]))
    x, w = leggauss(32)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    z = (0.5 * (lo + hi) + half * x).ravel()
    wt = (half * w).ravel() * _INV_SQRT_2PI * np.exp(-0.5 * z**2)
    return z, wt


def hermite_coeffs(
    act: ActivationSpec,
    q: float = 1.0,
    n_max: int = 40,
    rule: QuadratureRule | None = None,
) -> HermiteSpectrum:
    """Coefficients a_n = <f, h_n> of f(z) = phi(sqrt(q) z).

    A Gauss-Hermite ``rule`` is used only when the activation is smooth and
    the rule integrates degree 2 n_max exactly; otherwise composite
    Gauss-Legendre panels split at the kinks are used.
    """
    if n_max < 0:
        raise InvalidArgument("n_max must be nonnegative")
    if n_max > HERMITE_CAP:
        raise InvalidArgument(f"n_max={n_max} exceeds the stable recursion cap {HERMITE_CAP}")
    if not q > 0:
        raise InvalidArgument(f"variance must be positive, got {q}")
    sq = math.sqrt(q)
    if rule is not None and not act.is_kinked and rule.order > 2 * n_max:
        z, w = rule.nodes, rule.weights
    else:
        z, w = _hermite_panels(n_max, tuple(k / sq for k in act.kinks))
    fw = act.value(sq * z) * np.sqrt(w)
    coeffs = _psi_table(z, np.sqrt(w), n_max) @ fw
    if act.parity == "odd":
        coeffs[0::2] = 0.0
    elif act.parity == "even":
        coeffs[1::2] = 0.0
    return _spectrum(coeffs, q, act.name)


def relu_spectrum(n_max: int, q: float = 1.0) -> HermiteSpectrum:
    """Closed-form spectrum of ReLU(sqrt(q) z); coefficients scale as sqrt(q)."""
    coeffs = math.sqrt(q) * np.array([relu_hermite_closed(n) for n in range(n_max + 1)])
    return _spectrum(coeffs, q, "relu")


def rayleigh_quotient(act: ActivationSpec, q: float = 1.0, rule: QuadratureRule | None = None) -> float:
    """||f'||^2 / ||f||^2 under Dz, with f(z) = phi(sqrt(q) z)."""
    norm = moment(act, q, rule)
    if norm <= 0.0:
        raise DegenerateInput(f"{act.name} has zero Gaussian norm at q={q}")
    grad = q * expect1(lambda u: act.deriv(u) ** 2, q, rule, breakpoints=act.kinks)
    return grad / norm


def chi_q_hermite(
    spectrum: HermiteSpectrum,
    sigma_w_sq: float,
    sigma_b_sq: float,
    *,
    rtol: float = 1e-8,
) -> float:
    """Variance-channel susceptibility dq'/dq at q*, from the spectrum.

    The spectrum must have been taken at the variance fixed point, i.e.
    ``spectrum.q == sigma_w_sq * spectrum.sum_sq + sigma_b_sq``.
    """
    a = np.asarray(spectrum.coeffs)
    q_star = sigma_w_sq * spectrum.sum_sq + sigma_b_sq
    if abs(q_star - spectrum.q) > rtol * max(1.0, spectrum.q):
        raise InvalidArgument(
            f"spectrum taken at q={spectrum.q} but the fixed point implied by "
            f"(sigma_w^2, sigma_b^2) is {q_star}"
        )
    n = np.arange(len(a))
    diag = float(np.dot(n, a**2))
    cross = float(np.sum(np.sqrt((n[:-2] + 1.0) * (n[:-2] + 2.0)) * a[:-2] * a[2:])) if len(a) > 2 else 0.0
    return sigma_w_sq / q_star * (diag + cross)


@dataclass(frozen=True)
class Classification:
    smoothness: Smoothness
    tail_slope: float | None
    r_squared: float | None
    n_points: int
    degenerate: bool = False


def classify_universality(
    spectrum: HermiteSpectrum,
    *,
    n_min: int = 10,
    max_slope: float = 3.0,
    min_r_squared: float = 0.99,
) -> Classification:
    """Diagnose power-law (kinked) versus fast (smooth) Hermite decay.

    A straight line in log|a_n| vs log n over the nonzero tail with
    |slope| < ``max_slope`` and R^2 > ``min_r_squared`` means kinked.
    """
    a = np.abs(np.asarray(spectrum.coeffs))
    scale = a.max() if a.size else 0.0
    nonzero = a > 1e-13 * max(scale, 1e-300)
    n = np.arange(len(a))
    tail = nonzero & (n >= n_min)
    if not tail.any():
        if nonzero.any():
            # finite expansion: a polynomial, analytic by construction
            return Classification(Smoothness.SMOOTH, None, None, 0, degenerate=True)
        raise InsufficientData("spectrum is identically zero")
    if tail.sum() < 5:
        raise InsufficientData(f"only {int(tail.sum())} nonzero tail coefficients")
    x, y = np.log(n[tail]), np.log(a[tail])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    kinked = abs(slope) < max_slope and r2 > min_r_squared
    return Classification(
        Smoothness.KINKED if kinked else Smoothness.SMOOTH, float(slope), r2, int(tail.sum())
    )
