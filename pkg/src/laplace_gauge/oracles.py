"""Reference computations that stand apart from the diagnostic itself.

Everything here answers "what is the integral really" (or "what does the
posterior mean surface really look like") by brute force: midpoint-rule
quadrature in low dimension and importance sampling with a heavy-tailed
proposal in any dimension. The diagnostic never calls these at decision
time; calibration and the test-suite use them as ground truth.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .errors import AllWeightsZero, CellCountOverflow
from .engine import DiagnosticConfig, residual_vector, _gram
from .integrand import IntegrandSpec, eval_log_f, gaussian_approx

__all__ = [
    "ISResult",
    "riemann_integrate",
    "l2_error",
    "importance_sample",
    "CELL_BUDGET",
]

# hard cap on midpoint cells per call; beyond this the request is refused
# rather than silently thrashing
CELL_BUDGET = 10**8

_CHUNK = 200_000


def _box_axis(halfwidth: float, step: float) -> np.ndarray:
    return np.arange(-halfwidth, halfwidth, step) + step / 2.0


def _check_budget(n_axis: int, d: int) -> None:
    if n_axis**d > CELL_BUDGET:
        raise CellCountOverflow(
            f"{n_axis}^{d} midpoint cells exceed the budget of {CELL_BUDGET:.0e}"
        )


def riemann_integrate(log_f, d: int, halfwidth: float, step: float) -> float:
    """Midpoint-rule integral of exp(log_f) over [-halfwidth, halfwidth]^d.

    ``log_f`` maps an (n, d) array to n log-values. Evaluation is chunked so
    large boxes do not materialize the full mesh of points at once.
    """
    if d > 3:
        raise ValueError("midpoint quadrature is limited to d <= 3")
    axis = _box_axis(halfwidth, step)
    _check_budget(axis.size, d)
    total = 0.0
    if d == 1:
        for start in range(0, axis.size, _CHUNK):
            x = axis[start : start + _CHUNK, None]
            total += float(np.sum(np.exp(log_f(x))))
    else:
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        for start in range(0, flat.shape[0], _CHUNK):
            total += float(np.sum(np.exp(log_f(flat[start : start + _CHUNK]))))
    return total * step**d


def l2_error(
    config: DiagnosticConfig,
    spec: IntegrandSpec,
    halfwidth: float,
    step: float,
    csv_path=None,
) -> float:
    """Riemann L2 distance between the posterior mean surface and f.

    The surface is the unnormalized posterior mean of the integrand model
    mapped back to original coordinates, m1x(x) g(x); with ``csv_path`` the
    pointwise difference is exported as (x..., difference) rows for visual
    inspection.
    """
    d = spec.dim
    if d > 2:
        raise ValueError("the L2 surface check is limited to d <= 2")
    approx = gaussian_approx(spec)
    res = residual_vector(spec, approx, config.grid, config.gamma)
    k_mat = _gram(config.grid, config.lam)
    w = scipy.linalg.solve(k_mat, res, assume_a="pos")

    axis = _box_axis(halfwidth, step)
    _check_budget(axis.size, d)
    t_inv = np.linalg.inv(approx.transform)
    f0 = math.exp(approx.log_f_mode)
    gamma, lam = config.gamma, config.lam
    pts = config.grid.points
    pts_sq = np.sum(pts**2, axis=1)

    if d == 1:
        flat = axis[:, None]
    else:
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)

    writer = None
    handle = None
    if csv_path is not None:
        handle = open(csv_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow([f"x{i + 1}" for i in range(d)] + ["difference"])
    try:
        total = 0.0
        for start in range(0, flat.shape[0], _CHUNK):
            x = flat[start : start + _CHUNK]
            s = (x - approx.mode) @ t_inv.T
            sq = np.sum(s**2, axis=1)
            gauss_part = f0 * np.exp(-sq / 2.0)
            meas_part = (
                f0
                * (2.0 * np.pi) ** (-d / 2.0)
                * gamma ** (-d)
                * np.exp(-sq / (2.0 * gamma**2))
            )
            d2 = sq[:, None] + pts_sq[None, :] - 2.0 * (s @ pts.T)
            surface = gauss_part + meas_part * (np.exp(-d2 / (2.0 * lam**2)) @ w)
            diff = surface - np.exp(eval_log_f(spec, x))
            total += float(np.sum(diff**2))
            if writer is not None:
                for row_x, row_diff in zip(x, diff):
                    writer.writerow([*row_x, row_diff])
    finally:
        if handle is not None:
            handle.close()
    return total * step**d


@dataclass(frozen=True)
class ISResult:
    """Importance-sampling estimate with its own quality indicators."""

    estimate: float
    std_error: float
    ci95: tuple
    n_samples: int
    max_weight_fraction: float
    ess: float


def importance_sample(
    spec: IntegrandSpec, n_samples: int, df: float = 5.0, seed: int = 0
) -> ISResult:
    """Estimate the integral of f with a heavy-tailed elliptical proposal.

    The proposal is a multivariate t centred at the mode with scale matrix
    equal to the negative inverse Hessian and ``df`` degrees of freedom,
    sampled as Gaussian over sqrt(chi-square/df). Weights f/q are handled in
    log space with a max shift; the estimate is the plain mean of weights and
    the 95% interval is Gaussian from their sample variance.
    """
    if df <= 0:
        raise ValueError("df must be positive")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    approx = gaussian_approx(spec)
    d = spec.dim
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, d))
    u = rng.chisquare(df, size=n_samples)
    scale = np.sqrt(df / u)
    x = approx.mode + (z @ approx.transform.T) * scale[:, None]

    maha = np.sum(z**2, axis=1) * (df / u)
    log_q = (
        gammaln((df + d) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * d * math.log(df * math.pi)
        - 0.5 * approx.log_det_neg_hinv
        - 0.5 * (df + d) * np.log1p(maha / df)
    )
    log_w = eval_log_f(spec, x) - log_q
    shift = float(np.max(log_w))
    if not np.isfinite(shift):
        raise AllWeightsZero("all importance weights underflowed")
    w = np.exp(log_w - shift)
    mean = float(np.mean(w))
    std_err = float(np.std(w, ddof=1) / math.sqrt(n_samples))
    factor = math.exp(shift)
    estimate = mean * factor
    std_error = std_err * factor
    w_sum = float(np.sum(w))
    return ISResult(
        estimate=estimate,
        std_error=std_error,
        ci95=(estimate - 1.96 * std_error, estimate + 1.96 * std_error),
        n_samples=n_samples,
        max_weight_fraction=float(np.max(w) / w_sum),
        ess=float(w_sum**2 / np.sum(w**2)),
    )
