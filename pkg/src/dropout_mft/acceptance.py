"""The eight acceptance checks, runnable from the CLI ``report`` command."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import activations as acts
from . import criticality_lab as lab
from . import scheduler as sch
from .finite_width import SimConfig, simulate
from .mft import ChannelParams, build_channel, correlation_map, critical_sigma_w, dropout_field

# published xi_eff column, L = 6, h_bar = 0.1, kinked t = 0 law
XI_EFF_TABLE = {
    ("constant", 0.2): 3.20,
    ("step_early", 0.2): 5.09,
    ("big_step", 0.3): 6.67,
    ("linear_inc", 0.2): 3.73,
    ("linear_dec", 0.2): 3.73,
    ("step_late", 0.2): 5.09,
    ("double", 0.2): 2.54,
    ("triple", 0.3): 2.22,
}

# ReLU coefficients as tabulated, in exact form
RELU_TABLE = {
    0: 1.0 / math.sqrt(2.0 * math.pi),
    1: 0.5,
    2: 1.0 / (2.0 * math.sqrt(math.pi)),
    3: 0.0,
    4: -1.0 / math.sqrt(48.0 * math.pi),
    5: 0.0,
    6: 1.0 / (4.0 * math.sqrt(10.0 * math.pi)),
    7: 0.0,
    8: -15.0 / math.sqrt(80640.0 * math.pi),
    9: 0.0,
    10: 105.0 / math.sqrt(7257600.0 * math.pi),
}

TANH_TABLE = (0.60570551, -0.14843719, 0.06254752, -0.03144542, 0.01741993, -0.01029184)

SMOOTH_COLLAPSE_T = (-5e-4, -2e-4, -5e-5, 0.0, 5e-5, 2e-4, 5e-4)
SMOOTH_COLLAPSE_H = (1e-8, 1e-7, 1e-6, 2e-6)
KINKED_COLLAPSE_T = (-5e-4, -2e-4, -5e-5, 0.0, 5e-5, 2e-4, 5e-4)
KINKED_COLLAPSE_H = (1e-11, 1e-10, 1e-9, 1e-8)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float
    details: dict = field(default_factory=dict)


def criterion_1() -> dict:
    sc = critical_sigma_w("relu", 0.0, 1.0)
    fields = {rho: dropout_field(ChannelParams(2.0 * rho, 0.0, rho, acts.RELU)) for rho in (0.99, 0.9, 0.5)}
    kappa = acts.relu_kappa()
    ok = (
        abs(sc - 2.0) < 1e-10
        and abs(kappa - 2.0 * math.sqrt(2.0) / (3.0 * math.pi)) < 1e-14
        and all(abs(h - (1.0 - rho)) < 1e-12 for rho, h in fields.items())
    )
    return {"passed": ok, "critical_sigma_w_sq": sc, "kappa": kappa, "fields": {str(k): v for k, v in fields.items()}}


def criterion_2() -> dict:
    rep = lab.exponent_report()
    rows = {f"{f.name}/{f.activation}": [f.estimate, f.std_error, f.passed] for f in rep.fits}
    return {"passed": rep.all_passed, "fits": rows, "failures": [list(x) for x in rep.failures]}


def criterion_3() -> dict:
    got = {}
    for (kind, h_max), want in XI_EFF_TABLE.items():
        val = sch.xi_eff(sch.schedule_library(kind, 0.1, h_max, 6), "kinked")
        got[kind] = [round(val, 2), want]
    none = sch.xi_eff(sch.schedule_library("none", 0.1, 0.2, 6), "kinked")
    ok = all(a == b for a, b in got.values()) and math.isinf(none)
    return {"passed": ok, "xi_eff": got}


def criterion_4() -> dict:
    smooth = lab.collapse_sweep("tanh", SMOOTH_COLLAPSE_T, SMOOTH_COLLAPSE_H)
    kinked = lab.collapse_sweep("relu", KINKED_COLLAPSE_T, KINKED_COLLAPSE_H)
    return {
        "passed": smooth.max_abs_residual < 0.02 and kinked.max_abs_residual < 0.03,
        "smooth_max_residual": smooth.max_abs_residual,
        "kinked_max_residual": kinked.max_abs_residual,
    }


def _hermite_basis_activation(n: int) -> acts.ActivationSpec:
    """h_n itself as an activation, for Rayleigh-quotient checks."""
    from numpy.polynomial import hermite_e as He

    c = np.zeros(n + 1)
    c[n] = 1.0 / math.sqrt(math.factorial(n))
    dc = He.hermeder(c)
    ddc = He.hermeder(dc) if n >= 2 else np.zeros(1)
    return acts.ActivationSpec(
        f"h{n}",
        lambda x: He.hermeval(x, c),
        lambda x: He.hermeval(x, dc) + 0.0 * np.asarray(x),
        lambda x: He.hermeval(x, ddc) + 0.0 * np.asarray(x),
        acts.Smoothness.SMOOTH,
        parity="even" if n % 2 == 0 else "odd",
    )


def criterion_5() -> dict:
    relu_ok = all(abs(acts.relu_hermite_closed(n) - exact) < 1e-15 for n, exact in RELU_TABLE.items())
    tanh = acts.hermite_coeffs(acts.TANH, 1.0, 11).coeffs
    tanh_err = max(abs(tanh[2 * k + 1] - v) for k, v in enumerate(TANH_TABLE))
    rq_err = max(abs(acts.rayleigh_quotient(_hermite_basis_activation(n)) - n) for n in range(1, 11))
    cls = acts.classify_universality(acts.hermite_coeffs(acts.RELU, 1.0, 120))
    ok = relu_ok and tanh_err < 1e-6 and rq_err < 1e-8 and abs(cls.tail_slope + 1.25) <= 0.05
    return {
        "passed": ok,
        "relu_table_match": relu_ok,
        "tanh_max_error": tanh_err,
        "rayleigh_max_error": rq_err,
        "relu_tail_slope": cls.tail_slope,
    }


def criterion_6() -> dict:
    hs = (1e-4, 1e-5, 1e-6, 1e-7)
    smooth, kinked = [], []
    for h in hs:
        ch = lab.realize_point("tanh", 0.0, h)
        smooth.append(abs(ch.fixed_point().m / math.sqrt(2.0 * h / ch.g) - 1.0))
        rho = 1.0 - h
        ch = build_channel(ChannelParams(2.0 * rho, 0.0, rho, acts.RELU))
        kinked.append(abs(ch.fixed_point().m / (h / acts.relu_kappa()) ** (2.0 / 3.0) - 1.0))

    def good(errs):
        return max(errs) < 0.05 and all(b < a for a, b in zip(errs, errs[1:]))

    return {"passed": good(smooth) and good(kinked), "h": list(hs), "smooth_rel_error": smooth, "kinked_rel_error": kinked}


def criterion_7(width: int = 4096, trials: int = 200, seed: int = 7) -> dict:
    cases = {}
    ok = True
    tanh_sw = critical_sigma_w("tanh", lab.SIGMA_B_SQ, 1.0)
    for act, sw, sb in (("relu", 2.0, 0.0), ("tanh", tanh_sw, lab.SIGMA_B_SQ)):
        for rho in (1.0, 0.9):
            for c0 in (0.5, 1.0):
                p = ChannelParams(sw, sb, rho, act)
                res = simulate(SimConfig(p, width, 1, c0, trials, seed))
                theory = correlation_map(p, c0)
                gap = abs(res.c_hat[0] - theory)
                passed = gap <= 3.0 * res.c_se[0] + 1e-9
                ok &= bool(passed)
                cases[f"{act}/rho={rho}/c0={c0}"] = [float(res.c_hat[0]), float(res.c_se[0]), theory, bool(passed)]
    return {"passed": ok, "cases": cases}


def random_feasible_profiles(rng: np.random.Generator, n: int, L: int, h_bar: float, h_max: float) -> np.ndarray:
    """Uniform-ish draws from {0 <= h <= h_max, mean h = h_bar} by rejection."""
    out = np.empty((0, L))
    while len(out) < n:
        draw = rng.dirichlet(np.ones(L), size=4 * n) * (L * h_bar)
        out = np.vstack([out, draw[(draw <= h_max).all(axis=1)]])
    return out[:n]


def criterion_8(draws: int = 10_000, seed: int = 11) -> dict:
    L, h_bar, h_max = 6, 0.1, 0.2
    rng = np.random.default_rng(seed)
    profiles = random_feasible_profiles(rng, draws, L, h_bar, h_max)
    w = sch.reach_weights(L, 4.0)
    best = sch.frontload_lp(h_bar, h_max, w)
    lp_value = best.reach(w)
    lp_ok = bool(np.all(profiles @ np.array(w.weights) <= lp_value + 1e-12))
    base = sch.ScheduleProfile.from_layers([0.3, 0.0, 0.17, 0.05, 0.08, 0.0], 0.3)
    perms = [rng.permutation(base.h_per_layer) for _ in range(200)]
    xi0 = sch.xi_eff(base)
    perm_ok = all(sch.xi_eff(sch.ScheduleProfile.from_layers(p, 0.3)) == xi0 for p in perms)
    const = sch.xi_eff(sch.schedule_library("constant", h_bar, h_max, L))
    coeff = sch.kinked_coeff()
    xis = L / (coeff * np.sum(profiles ** (1.0 / 3.0), axis=1))
    const_ok = bool(np.all(xis >= const - 1e-12))
    return {"passed": lp_ok and perm_ok and const_ok, "lp_beats_random": lp_ok, "permutation_exact": perm_ok, "constant_minimizes": const_ok}


CRITERIA: dict[int, tuple[str, Callable[[], dict]]] = {
    1: ("criticality constants", criterion_1),
    2: ("fitted-exponent table", criterion_2),
    3: ("xi_eff table", criterion_3),
    4: ("scaling collapse", criterion_4),
    5: ("Hermite spectra", criterion_5),
    6: ("normal form vs full recursion", criterion_6),
    7: ("finite-width validation", criterion_7),
    8: ("scheduler optimality", criterion_8),
}


def run(numbers=None) -> list[CriterionResult]:
    out = []
    for k in numbers or sorted(CRITERIA):
        title, fn = CRITERIA[k]
        t0 = time.perf_counter()
        details = fn()
        passed = bool(details.pop("passed"))
        out.append(CriterionResult(k, title, passed, time.perf_counter() - t0, details))
    return out
