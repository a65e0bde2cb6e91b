"""Critical exponents measured on the full mean-field recursion.

Each ``measure_*`` function realizes a family of theory points, solves the
exact fixed point (or iterates the exact map) and fits a power law in
log-log space. Which microscopic path is used is recorded in
``ExponentFit.path``:

* smooth activations are retuned so that chi takes the requested value;
  fields are produced by lowering the keep probability while holding chi = 1;
* bias-free ReLU cannot be held at chi = 1 with dropout, so its field sweeps
  follow the locked path rho = 1 - h, sigma_w^2 = 2 rho (t = -h);
* finite-variance ReLU cannot reach t > 0, so its ordered side uses the
  continued map (1 + t) F_ReLU(c) - t.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.optimize import brentq

from . import activations as acts
from . import landau
from .activations import ActivationSpec, Smoothness
from .errors import ClassMismatchError, DegenerateInput, InsufficientData, InvalidArgument, MFTError
from .mft import (
    Channel,
    ChannelParams,
    build_channel,
    continued_relu_channel,
    critical_sigma_w,
    curvature_g,
)

T_GRID = tuple(np.geomspace(1e-5, 1e-2, 20))
H_GRID = tuple(np.geomspace(1e-6, 1e-3, 20))
DEPTH = 100_000
DEPTH_WINDOW = (1e3, 1e5)
SIGMA_B_SQ = 0.02
C0 = 0.5

EXPONENTS = ("nu_t", "beta", "theta_rel", "inv_delta", "nu_rho")

THEORY = {
    ("nu_t", "smooth"): 1.0,
    ("nu_t", "kinked"): 1.0,
    ("beta", "smooth"): 1.0,
    ("beta", "kinked"): 2.0,
    ("theta_rel", "smooth"): 1.0,
    ("theta_rel", "kinked"): 2.0,
    ("inv_delta", "smooth"): 0.5,
    ("inv_delta", "kinked"): 2.0 / 3.0,
    ("nu_rho", "smooth"): 0.5,
    ("nu_rho", "kinked"): 1.0 / 3.0,
}

# published log-log fits, kept for side-by-side comparison
REFERENCE = {
    ("nu_t", "tanh"): 1.0190,
    ("nu_t", "relu"): 1.0190,
    ("beta", "tanh"): 0.9879,
    ("beta", "relu"): 1.9642,
    ("theta_rel", "tanh"): 1.0048,
    ("theta_rel", "relu"): 1.9870,
    ("inv_delta", "tanh"): 0.5171,
    ("inv_delta", "relu"): 0.6656,
    ("nu_rho", "tanh"): 0.4716,
    ("nu_rho", "relu"): 0.3528,
}

ACCEPTANCE = {
    ("nu_t", "tanh"): (0.95, 1.05),
    ("nu_t", "relu"): (0.95, 1.05),
    ("beta", "tanh"): (0.95, 1.05),
    ("beta", "relu"): (1.9, 2.1),
    ("theta_rel", "tanh"): (0.98, 1.02),
    ("theta_rel", "relu"): (1.97, 2.03),
    ("inv_delta", "tanh"): (0.48, 0.54),
    ("inv_delta", "relu"): (0.63, 0.70),
    ("nu_rho", "tanh"): (0.45, 0.55),
    ("nu_rho", "relu"): (0.30, 0.37),
}


@dataclass(frozen=True)
class PowerLaw:
    slope: float
    intercept: float
    std_error: float
    r_squared: float


def fit_power_law(xs: Sequence[float], ys: Sequence[float]) -> PowerLaw:
    """Ordinary least squares of log y on log x."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape:
        raise InvalidArgument("xs and ys must have the same length")
    if x.size < 5:
        raise InsufficientData(f"need at least 5 points, got {x.size}")
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise InvalidArgument("power-law fits need strictly positive data")
    res = stats.linregress(np.log(x), np.log(y))
    r2 = res.rvalue**2 if np.isfinite(res.rvalue) else 1.0
    return PowerLaw(float(res.slope), float(res.intercept), float(res.stderr), float(r2))


@dataclass(frozen=True)
class SweepSpec:
    activation: str
    variable: str
    grid: tuple[float, ...]
    response: str
    fixed: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.variable not in ("t", "h", "depth"):
            raise InvalidArgument(f"unknown swept variable {self.variable!r}")
        if self.response not in ("m", "xi"):
            raise InvalidArgument(f"unknown response {self.response!r}")
        g = np.asarray(self.grid, dtype=float)
        if g.size == 0 or np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise InvalidArgument("sweep grids must be strictly positive and increasing")


@dataclass(frozen=True)
class ExponentFit:
    name: str
    activation: str
    estimate: float
    std_error: float
    window: tuple[float, float]
    n_points: int
    r_squared: float
    theory: float
    path: str
    reference: float | None = None
    grid: tuple[float, ...] = field(default=(), repr=False)
    response: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.n_points < 5:
            raise InsufficientData(f"{self.name}: only {self.n_points} usable points")
        if not self.window[0] < self.window[1]:
            raise InvalidArgument("fit window must satisfy low < high")
        if not math.isfinite(self.std_error):
            raise InvalidArgument("standard error must be finite")

    @property
    def acceptance(self) -> tuple[float, float] | None:
        return ACCEPTANCE.get((self.name, self.activation))

    @property
    def passed(self) -> bool | None:
        win = self.acceptance
        return None if win is None else win[0] <= self.estimate <= win[1]


def _smoothness(act: ActivationSpec) -> str:
    return act.smoothness.value


def _is_relu(act: ActivationSpec) -> bool:
    return act is acts.RELU


def _refuse_degenerate(act: ActivationSpec, sigma_b_sq: float) -> None:
    if act.is_kinked:
        if not _is_relu(act):
            raise ClassMismatchError(f"exponent sweeps for kinked activations need ReLU, got {act.name}")
        return
    a = np.abs(acts.hermite_coeffs(act, 1.0, 8).coeffs)
    if a[2:].max() <= 1e-12 * a.max():
        # linear map: no curvature at any width, and no finite critical point with bias
        raise DegenerateInput(f"{act.name}: linear activation, no smooth-class exponents")
    sw = critical_sigma_w(act, sigma_b_sq, 1.0)
    if curvature_g(ChannelParams(sw, sigma_b_sq, 1.0, act)) <= 0.0:
        raise DegenerateInput(f"{act.name}: g = 0 at criticality, no smooth-class exponents")


def _fit(name, act, xs, ys, path, sign=1.0, window=None) -> ExponentFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = np.isfinite(ys) & (ys > 0)
    if window is not None:
        ok &= (xs >= window[0]) & (xs <= window[1])
    if ok.sum() < 5:
        raise InsufficientData(f"{name} for {act.name}: {int(ok.sum())} usable points")
    pl = fit_power_law(xs[ok], ys[ok])
    return ExponentFit(
        name=name,
        activation=act.name,
        estimate=sign * pl.slope,
        std_error=pl.std_error,
        window=(float(xs[ok].min()), float(xs[ok].max())),
        n_points=int(ok.sum()),
        r_squared=pl.r_squared,
        theory=THEORY[(name, _smoothness(act))],
        path=path,
        reference=REFERENCE.get((name, act.name)),
        grid=tuple(map(float, xs[ok])),
        response=tuple(map(float, ys[ok])),
    )


# --- realizing theory points ---------------------------------------------


@lru_cache(maxsize=64)
def _critical(act: ActivationSpec, sigma_b_sq: float, rho: float) -> float:
    return critical_sigma_w(act, sigma_b_sq, rho)


def _tuned(act: ActivationSpec, sigma_b_sq: float, rho: float, chi_target: float) -> ChannelParams:
    sc = _critical(act, sigma_b_sq, 1.0)
    sw = critical_sigma_w(act, sigma_b_sq, rho, bracket=(0.5 * sc, 2.0 * sc), chi_target=chi_target)
    return ChannelParams(sw, sigma_b_sq, rho, act)


def realize_point(activation, t: float, h: float, sigma_b_sq: float = SIGMA_B_SQ) -> Channel:
    """A channel with reduced temperature ``t`` and field ``h``.

    Smooth activations are tuned exactly: sigma_w^2 sets chi = 1 + t and the
    keep probability sets the field. ReLU uses a genuine biased network when
    t < -h (the only region with finite variance) and the continued map
    otherwise.
    """
    act = acts.get_activation(activation)
    if not h >= 0.0:
        raise InvalidArgument(f"field must be nonnegative, got {h}")
    if act.is_kinked:
        if not _is_relu(act):
            raise ClassMismatchError(f"no realizable kinked path for {act.name}")
        if h > 0.0 and t < -h:
            a = 1.0 + t + h
            rho = (1.0 + t) / a
            ch = build_channel(ChannelParams(2.0 * rho * a, sigma_b_sq, rho, act))
            return ch
        return continued_relu_channel(t, h)
    if h == 0.0:
        return build_channel(_tuned(act, sigma_b_sq, 1.0, 1.0 + t))

    def field_gap(rho):
        return build_channel(_tuned(act, sigma_b_sq, rho, 1.0 + t)).h - h

    hi = 1.0 - 1e-3 * h
    lo = max(1e-3, 1.0 - 4.0 * h)
    while field_gap(lo) < 0.0:
        if lo <= 1e-3:
            raise InvalidArgument(f"field h={h} is out of reach for {act.name}")
        lo = max(1e-3, 1.0 - 4.0 * (1.0 - lo))
    rho = brentq(field_gap, lo, hi, xtol=1e-16, rtol=1e-15)
    return build_channel(_tuned(act, sigma_b_sq, rho, 1.0 + t))


# --- sweeps ----------------------------------------------------------------


@lru_cache(maxsize=32)
def _field_sweep(act: ActivationSpec, grid: tuple[float, ...], sigma_b_sq: float):
    """(h, m, xi, path) along the t = 0 (smooth) or t = -h (ReLU) field path."""
    hs, ms, xis = [], [], []
    if act.is_kinked:
        path = "bias-free ReLU locked path rho = 1 - h, sigma_w^2 = 2 rho (t = -h)"
        for h in grid:
            rho = 1.0 - h
            fp = build_channel(ChannelParams(2.0 * rho, 0.0, rho, act)).fixed_point()
            if fp.converged:
                hs.append(h)
                ms.append(fp.m)
                xis.append(fp.xi)
    else:
        path = f"chi = 1 retuned per keep probability, sigma_b^2 = {sigma_b_sq}"
        for h in grid:
            try:
                fp = realize_point(act, 0.0, h, sigma_b_sq).fixed_point()
            except MFTError:
                continue
            if fp.converged:
                hs.append(h)
                ms.append(fp.m)
                xis.append(fp.xi)
    return np.array(hs), np.array(ms), np.array(xis), path


def measure_beta(activation, grid: Sequence[float] = T_GRID, sigma_b_sq: float = SIGMA_B_SQ) -> ExponentFit:
    """m ~ t^beta on the ordered side at zero field."""
    act = acts.get_activation(activation)
    _refuse_degenerate(act, sigma_b_sq)
    ts, ms = [], []
    for t in grid:
        if t <= 0:
            raise InvalidArgument("beta sweeps need t > 0")
        try:
            if act.is_kinked:
                ch = continued_relu_channel(t)
            else:
                ch = build_channel(_tuned(act, sigma_b_sq, 1.0, 1.0 + t))
        except MFTError:
            continue
        fp = ch.fixed_point()
        if fp.converged:
            ts.append(t)
            ms.append(fp.m)
    path = (
        "continued map (1 + t) F_ReLU(c) - t, h = 0"
        if act.is_kinked
        else f"chi = 1 + t retuned at rho = 1, sigma_b^2 = {sigma_b_sq}"
    )
    return _fit("beta", act, ts, ms, path)


def measure_nu_t(activation, grid: Sequence[float] = T_GRID, sigma_b_sq: float = SIGMA_B_SQ) -> ExponentFit:
    """xi ~ |t|^-nu_t on the disordered side at zero field."""
    act = acts.get_activation(activation)
    if act.is_kinked and not _is_relu(act):
        raise ClassMismatchError(f"exponent sweeps for kinked activations need ReLU, got {act.name}")
    ts, xis = [], []
    for t in grid:
        if t <= 0:
            raise InvalidArgument("give |t| values; the sweep sits at t = -|t|")
        if act.is_kinked:
            params = ChannelParams(2.0 * (1.0 - t), sigma_b_sq, 1.0, act)
        else:
            params = _tuned(act, sigma_b_sq, 1.0, 1.0 - t)
        fp = build_channel(params).fixed_point()
        if fp.converged:
            ts.append(t)
            xis.append(fp.xi)
    return _fit("nu_t", act, ts, xis, f"chi = 1 - |t| at rho = 1, sigma_b^2 = {sigma_b_sq}", sign=-1.0)


def measure_delta(activation, grid: Sequence[float] = H_GRID, sigma_b_sq: float = SIGMA_B_SQ) -> ExponentFit:
    """m ~ h^(1/delta) along the field path; the estimate is 1/delta."""
    act = acts.get_activation(activation)
    _refuse_degenerate(act, sigma_b_sq)
    hs, ms, _, path = _field_sweep(act, tuple(map(float, grid)), sigma_b_sq)
    return _fit("inv_delta", act, hs, ms, path)


def measure_nu_rho(activation, grid: Sequence[float] = H_GRID, sigma_b_sq: float = SIGMA_B_SQ) -> ExponentFit:
    """xi ~ h^-nu_rho along the field path."""
    act = acts.get_activation(activation)
    _refuse_degenerate(act, sigma_b_sq)
    hs, _, xis, path = _field_sweep(act, tuple(map(float, grid)), sigma_b_sq)
    return _fit("nu_rho", act, hs, xis, path, sign=-1.0)


def measure_theta_rel(
    activation,
    depth: int = DEPTH,
    window: tuple[float, float] = DEPTH_WINDOW,
    c0: float = C0,
    sigma_b_sq: float = SIGMA_B_SQ,
    n_record: int = 200,
) -> ExponentFit:
    """m_l ~ l^-theta_rel at exact criticality and zero field."""
    act = acts.get_activation(activation)
    _refuse_degenerate(act, sigma_b_sq)
    if act.is_kinked:
        ch = build_channel(ChannelParams(2.0, 0.0, 1.0, act))
        path = "sigma_w^2 = 2, sigma_b^2 = 0, rho = 1"
    else:
        ch = build_channel(ChannelParams(_critical(act, sigma_b_sq, 1.0), sigma_b_sq, 1.0, act))
        path = f"critical sigma_w^2 at rho = 1, sigma_b^2 = {sigma_b_sq}"
    record = np.unique(np.geomspace(1, depth, n_record).astype(int))
    traj = ch.iterate(c0, depth, record)
    return _fit("theta_rel", act, traj.depth, traj.m, f"{path}, c0 = {c0}", sign=-1.0, window=window)


MEASURES = {
    "nu_t": measure_nu_t,
    "beta": measure_beta,
    "theta_rel": measure_theta_rel,
    "inv_delta": measure_delta,
    "nu_rho": measure_nu_rho,
}


def measure(name: str, activation, **kwargs) -> ExponentFit:
    try:
        fn = MEASURES[name]
    except KeyError:
        raise InvalidArgument(f"unknown exponent {name!r}; known: {list(MEASURES)}") from None
    return fn(activation, **kwargs)


# --- reporting -------------------------------------------------------------


@dataclass(frozen=True)
class ExponentReport:
    fits: tuple[ExponentFit, ...]
    failures: tuple[tuple[str, str, str], ...] = ()

    @property
    def all_passed(self) -> bool:
        return not self.failures and all(f.passed is not False for f in self.fits)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for name, act, err in self.failures:
            buf.write(f"# failed: {name} {act}: {err}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([
            "exponent", "activation", "estimate", "std_error", "theory", "reference",
            "accept_low", "accept_high", "passed", "window_low", "window_high",
            "n_points", "r_squared", "window_flag", "path",
        ])
        for f in self.fits:
            lo, hi = f.acceptance or ("", "")
            w.writerow([
                f.name, f.activation, f"{f.estimate:.6f}", f"{f.std_error:.3e}", f"{f.theory:.6f}",
                "" if f.reference is None else f"{f.reference:.4f}", lo, hi, f.passed,
                f"{f.window[0]:.6g}", f"{f.window[1]:.6g}", f.n_points, f"{f.r_squared:.6f}",
                "ok" if f.r_squared > 0.999 else "low_r_squared", f.path,
            ])
        return buf.getvalue()


def exponent_report(
    activations: Sequence[str] = ("tanh", "relu"),
    exponents: Sequence[str] = EXPONENTS,
    sigma_b_sq: float = SIGMA_B_SQ,
) -> ExponentReport:
    """Run every requested sweep; failures are collected, not raised."""
    fits, failures = [], []
    for name in exponents:
        for act in activations:
            try:
                fits.append(measure(name, act, sigma_b_sq=sigma_b_sq))
            except MFTError as exc:
                failures.append((name, str(act), str(exc)))
    return ExponentReport(tuple(fits), tuple(failures))


def sweep_csv(fit: ExponentFit) -> str:
    """Raw sweep as (grid_value, response) rows with the fit appended as comments."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grid_value", "response"])
    for x, y in zip(fit.grid, fit.response):
        w.writerow([repr(x), repr(y)])
    buf.write(f"# exponent={fit.name} activation={fit.activation} path={fit.path}\n")
    buf.write(f"# estimate={fit.estimate!r} std_error={fit.std_error!r} r_squared={fit.r_squared!r}\n")
    buf.write(f"# window={fit.window[0]!r},{fit.window[1]!r} n_points={fit.n_points} theory={fit.theory!r}\n")
    if fit.reference is not None:
        buf.write(f"# reference={fit.reference!r}\n")
    return buf.getvalue()


# --- normal-form comparisons ---------------------------------------------


def normal_form_m(channel: Channel) -> float:
    """Landau prediction for m* from the channel's own (t, h, g or kappa)."""
    t = channel.chi - 1.0
    if channel.smoothness is Smoothness.SMOOTH:
        return landau.m_smooth(t, channel.h, channel.g)
    return landau.m_kinked(t, channel.h, channel.kappa)


def normal_form_deviation(channel: Channel) -> float:
    """Relative gap between the exact fixed point and the Landau root."""
    exact = channel.fixed_point().m
    nf = normal_form_m(channel)
    return abs(exact - nf) / nf


def collapse_sweep(
    activation,
    ts: Sequence[float],
    hs: Sequence[float],
    sigma_b_sq: float = SIGMA_B_SQ,
) -> landau.CollapseResult:
    """Exact fixed points on a (t, h) grid, rescaled with the critical g or kappa."""
    act = acts.get_activation(activation)
    points = []
    for t in ts:
        for h in hs:
            ch = realize_point(act, t, h, sigma_b_sq)
            points.append((t, h, ch.fixed_point().m))
    if act.is_kinked:
        return landau.collapse_kinked(points, acts.relu_kappa())
    sc = _critical(act, sigma_b_sq, 1.0)
    return landau.collapse_smooth(points, curvature_g(ChannelParams(sc, sigma_b_sq, 1.0, act)))
