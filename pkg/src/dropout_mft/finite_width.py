"""Monte Carlo check of the Gaussian channel on finite-width random MLPs.

Layer l maps z^{l-1} -> z^l = W (p * phi(z^{l-1}) / rho) + b, with
W_ij ~ N(0, sigma_w^2 / N), b_i ~ N(0, sigma_b^2) and an independent
Bernoulli(rho) mask p for every input.

Given the masked activations Y (N x k, one column per input), the rows of
z = W^T-projection plus bias are i.i.d. across neurons with covariance
(sigma_w^2 / N) Y^T Y + sigma_b^2. The default ``method="projection"``
samples that k-dimensional Gaussian directly, which is exact in distribution
and costs O(N k) per layer instead of O(N^2). ``method="dense"`` draws the
full weight matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CannotRealizeCorrelation, InvalidArgument
from .mft import ChannelParams, qstar, two_input_recursion


@dataclass(frozen=True)
class SimConfig:
    params: ChannelParams
    width: int
    depth: int
    c0: float
    trials: int
    seed: int = 0
    q0: float | None = None  # input variance; defaults to the fixed point
    method: str = "projection"

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise InvalidArgument(f"width must be a positive integer, got {self.width}")
        if self.width < 2 and abs(self.c0) != 1.0:
            raise CannotRealizeCorrelation(f"width {self.width} cannot hold two inputs at correlation {self.c0}")
        if int(self.depth) != self.depth or self.depth < 1:
            raise InvalidArgument(f"depth must be a positive integer, got {self.depth}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise InvalidArgument(f"trials must be a positive integer, got {self.trials}")
        if abs(self.c0) > 1.0:
            raise InvalidArgument(f"correlation must lie in [-1, 1], got {self.c0}")
        if self.seed < 0:
            raise InvalidArgument("seed must be an unsigned integer")
        if self.q0 is not None and not self.q0 > 0:
            raise InvalidArgument("q0 must be positive")
        if self.method not in ("projection", "dense"):
            raise InvalidArgument(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class SimResult:
    """Per-layer estimates for layers 1..depth (index 0 is the input)."""

    q_hat: np.ndarray
    q_se: np.ndarray
    c_hat: np.ndarray
    c_se: np.ndarray
    mean_shift: np.ndarray
    mean_shift_se: np.ndarray
    trials: int
    config: SimConfig = field(repr=False)

    def theory(self) -> tuple[np.ndarray, np.ndarray]:
        q0 = self.config.q0 if self.config.q0 is not None else qstar(self.config.params)
        return two_input_recursion(self.config.params, q0, self.config.c0, self.config.depth)

    def z_scores(self) -> np.ndarray:
        """(c_hat - theory) / SE per layer; NaN where the SE vanishes."""
        _, c_th = self.theory()
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.c_hat - c_th[1:]) / self.c_se


def _input_pair(rng: np.random.Generator, n: int, c0: float, q0: float) -> np.ndarray:
    """Columns with squared norm n q0 and inner product exactly c0 (Gram-Schmidt)."""
    g = rng.standard_normal((n, 2))
    e1 = g[:, 0] / np.linalg.norm(g[:, 0])
    if abs(c0) == 1.0:
        x2 = c0 * e1
    else:
        v = g[:, 1] - (g[:, 1] @ e1) * e1
        e2 = v / np.linalg.norm(v)
        x2 = c0 * e1 + math.sqrt((1.0 - c0) * (1.0 + c0)) * e2
    return math.sqrt(n * q0) * np.column_stack([e1, x2])


def _gaussian_rows(rng: np.random.Generator, cov: np.ndarray, n: int) -> np.ndarray:
    """n i.i.d. rows from N(0, cov); cov may be singular (aligned inputs)."""
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return rng.standard_normal((n, cov.shape[0])) @ root.T


def _layer(rng, y: np.ndarray, params: ChannelParams, method: str) -> np.ndarray:
    n = y.shape[0]
    if method == "dense":
        w = rng.standard_normal((n, n)) * math.sqrt(params.sigma_w_sq / n)
        b = rng.standard_normal(n) * math.sqrt(params.sigma_b_sq)
        return w @ y + b[:, None]
    cov = params.sigma_w_sq / n * (y.T @ y) + params.sigma_b_sq
    return _gaussian_rows(rng, cov, n)


def _trial(cfg: SimConfig, seq: np.random.SeedSequence, q0: float) -> np.ndarray:
    """Per-layer (q, c, mean shift) for one network draw."""
    rng = np.random.Generator(np.random.Philox(seq))
    p = cfg.params
    act = p.activation
    z = _input_pair(rng, cfg.width, cfg.c0, q0)
    # columns: input a masked, input b masked, input a unmasked (same weights)
    z = np.column_stack([z, z[:, 0]])
    out = np.empty((cfg.depth, 3))
    for ell in range(cfg.depth):
        y = act.value(z)
        mask = rng.random((cfg.width, 2)) < p.rho
        y[:, :2] *= mask / p.rho
        z = _layer(rng, y, p, cfg.method)
        qa = np.mean(z[:, 0] ** 2)
        qb = np.mean(z[:, 1] ** 2)
        qab = np.mean(z[:, 0] * z[:, 1])
        out[ell] = (0.5 * (qa + qb), qab / math.sqrt(qa * qb), np.mean(z[:, 0] - z[:, 2]))
    return out


def simulate(config: SimConfig) -> SimResult:
    """Run ``config.trials`` independent networks; estimates are trial averages.

    Each trial owns a Philox stream spawned from ``config.seed``, so results
    do not depend on the order trials are run in.
    """
    q0 = config.q0 if config.q0 is not None else qstar(config.params)
    streams = np.random.SeedSequence(config.seed).spawn(config.trials)
    runs = np.stack([_trial(config, s, q0) for s in streams])
    mean = runs.mean(axis=0)
    if config.trials > 1:
        se = runs.std(axis=0, ddof=1) / math.sqrt(config.trials)
    else:
        se = np.full_like(mean, np.nan)
    return SimResult(
        q_hat=mean[:, 0],
        q_se=se[:, 0],
        c_hat=mean[:, 1],
        c_se=se[:, 1],
        mean_shift=mean[:, 2],
        mean_shift_se=se[:, 2],
        trials=config.trials,
        config=config,
    )


@dataclass(frozen=True)
class ConvergenceRow:
    width: int
    c_hat: float
    c_se: float
    theory: float
    deviation: float


def convergence_study(template: SimConfig, widths) -> tuple[ConvergenceRow, ...]:
    """|c_hat_1 - theory| for each width, single layer, same seed and trials."""
    widths = list(widths)
    if widths != sorted(widths):
        raise InvalidArgument("widths must be sorted ascending")
    rows = []
    for n in widths:
        cfg = SimConfig(template.params, n, 1, template.c0, template.trials, template.seed, template.q0, template.method)
        res = simulate(cfg)
        _, c_th = res.theory()
        rows.append(ConvergenceRow(n, float(res.c_hat[0]), float(res.c_se[0]), float(c_th[1]), abs(float(res.c_hat[0] - c_th[1]))))
    return tuple(rows)


def deviation_slope(rows) -> float:
    """Log-log slope of deviation against width (recorded, not asserted)."""
    n = np.array([r.width for r in rows], dtype=float)
    d = np.array([max(r.deviation, 1e-300) for r in rows])
    return float(np.polyfit(np.log(n), np.log(d), 1)[0])
