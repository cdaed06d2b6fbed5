"""GP posterior for the reweighted integrand, correction term, and decision.

All posterior algebra happens in standardized coordinates with the scale
factor N = f(x_hat) sqrt(det(-H^{-1})) carried as a log. In these units the
Gram matrix is the plain squared exponential kernel on the preliminary grid,
the kernel mean and double kernel mean have closed Gaussian-convolution
forms, and the correction term Delta, the threshold epsilon, and the p-value
are invariant to scaling of f and affine maps of its domain.

Normalization contract
----------------------
With s the standardized coordinate and N as above:

* residual entries are (r(s) - m0(s)) / N,
* the kernel mean and Gram matrix drop their common factor N^2,
* Delta = z~^T K~^{-1} res is the paper-scale correction term,
* m1 = L(f) + N Delta, C1 = N^2 C1~, and the rejection rule
  |Delta| > epsilon = z_crit sqrt(C1~) is equivalent to the interval rule.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .errors import (
    DimensionMismatch,
    GramNotPD,
    NonFiniteLogF,
    ReducedSystemSingular,
)
from .grids import InterrogationGrid, PreliminaryGrid, to_interrogation
from .integrand import (
    GaussianApprox,
    IntegrandSpec,
    eval_log_f,
    gaussian_approx,
    laplace_approx,
)

__all__ = [
    "DiagnosticConfig",
    "IntegralPosterior",
    "DiagnosticReport",
    "kernel",
    "kernel_mean",
    "double_kernel_mean",
    "prior_mean_interrogation",
    "residual_vector",
    "posterior",
    "fskq_orbit_weights",
    "diagnose",
    "DENSE_POINT_LIMIT",
]

_LOG_2PI = np.log(2.0 * np.pi)

# above this grid size the dense Gram matrix is not formed and the
# orbit-reduced (FSKQ) path is used instead
DENSE_POINT_LIMIT = 2000

# 95% two-sided normal quantile as printed in the rejection rule; the exact
# value 1.959963984540054 is available for callers who want it
Z_CRIT_DEFAULT = 1.96
Z_CRIT_EXACT = 1.959963984540054


@dataclass(frozen=True)
class DiagnosticConfig:
    """Hyperparameters bound to a preliminary grid and dimension."""

    dim: int
    grid: PreliminaryGrid
    lam: float
    gamma: float
    log_alpha: float
    z_crit: float = Z_CRIT_DEFAULT

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("length-scale lambda must be positive")
        if self.gamma <= 0:
            raise ValueError("measure spread gamma must be positive")
        if not np.isfinite(self.log_alpha):
            raise ValueError("log_alpha must be finite")
        if self.grid.dim != self.dim:
            raise DimensionMismatch(
                f"grid dim {self.grid.dim} != config dim {self.dim}"
            )


@dataclass(frozen=True)
class IntegralPosterior:
    """Posterior on the integral in log-scaled, dimensionless form.

    ``m1_rel`` and ``c1_rel`` are the posterior mean and variance divided by
    L(f) and L(f)^2; ``delta`` and ``epsilon`` are the normalized correction
    term and rejection threshold (reject iff |delta| > epsilon iff
    p_value < the level implied by z_crit).
    """

    m1_rel: float
    c1_rel: float
    delta: float
    epsilon: float
    log_la: float
    p_value: float
    reject: bool
    rcond: float

    @property
    def la(self) -> float:
        return float(np.exp(self.log_la))

    @property
    def m1(self) -> float:
        return float(np.exp(self.log_la) * self.m1_rel)

    @property
    def c1(self) -> float:
        return float(np.exp(2.0 * self.log_la) * self.c1_rel)


def kernel(u, v, lam: float, log_alpha: float, d: int):
    """Log squared exponential kernel -d log(alpha) - ||u - v||^2 / (2 lambda^2).

    Inputs are in standardized coordinates; the Mahalanobis form is realized
    by standardization, with the scale factor carried separately.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    diff = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    sq = np.sum(np.atleast_2d(diff) ** 2, axis=-1)
    out = -d * log_alpha - sq / (2.0 * lam**2)
    return out if np.asarray(u).ndim > 1 or np.asarray(v).ndim > 1 else float(out[0])


def kernel_mean(s_star, lam: float, log_alpha: float, gamma: float, d: int):
    """Log of the kernel integrated against the standardized N(0, gamma^2 I).

    Closed Gaussian-by-Gaussian convolution form; verified against a
    quadrature oracle in the tests.
    """
    if lam <= 0 or gamma <= 0:
        raise ValueError("lambda and gamma must be positive")
    s = np.asarray(s_star, dtype=float)
    sq = np.sum(np.atleast_2d(s) ** 2, axis=-1)
    out = (
        -d * log_alpha
        + 0.5 * d * np.log(lam**2 / (lam**2 + gamma**2))
        - sq / (2.0 * (lam**2 + gamma**2))
    )
    return out if s.ndim > 1 else float(out[0])


def double_kernel_mean(lam: float, log_alpha: float, gamma: float, d: int) -> float:
    """Log of the kernel integrated against the measure in both arguments."""
    if lam <= 0 or gamma <= 0:
        raise ValueError("lambda and gamma must be positive")
    return float(-d * log_alpha + 0.5 * d * np.log(lam**2 / (lam**2 + 2.0 * gamma**2)))


def prior_mean_interrogation(s_star, gamma: float, d: int):
    """Log of the N-normalized GP prior mean at a standardized point.

    Returns log[m0(s) / N]; the absolute prior mean is recovered by adding
    log_scale_N.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    s = np.asarray(s_star, dtype=float)
    sq = np.sum(np.atleast_2d(s) ** 2, axis=-1)
    out = 0.5 * d * _LOG_2PI + d * np.log(gamma) - 0.5 * sq * (1.0 - 1.0 / gamma**2)
    return out if s.ndim > 1 else float(out[0])


def residual_vector(
    spec: IntegrandSpec,
    approx: GaussianApprox,
    grid: PreliminaryGrid,
    gamma: float,
) -> np.ndarray:
    """N-normalized residuals (r(S) - m0(S)) / N at the interrogation points.

    Entry i equals [f(s_i)/f(x_hat) - exp(-||s*_i||^2/2)] divided by the
    standardized measure density at s*_i. A log f of -inf maps to ratio 0;
    +inf or NaN raises NonFiniteLogF with the offending index.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    interr = to_interrogation(grid, approx)
    log_vals = eval_log_f(spec, interr.points)
    bad = np.nonzero(np.isnan(log_vals) | (log_vals == np.inf))[0]
    if bad.size:
        raise NonFiniteLogF(int(bad[0]))
    d = grid.dim
    sq = np.sum(grid.points**2, axis=1)
    log_ratio = log_vals - approx.log_f_mode
    # bracket = exp(log_ratio) - exp(-sq/2), factored for precision when the
    # two terms are both tiny and nearly equal (high-d tails)
    log_pref = (
        0.5 * d * _LOG_2PI
        + d * np.log(gamma)
        + sq / (2.0 * gamma**2)
        - sq / 2.0
    )
    return np.exp(log_pref) * np.expm1(log_ratio + sq / 2.0)


def _gram(grid: PreliminaryGrid, lam: float) -> np.ndarray:
    """Unit-precision Gram matrix exp(-||s_i - s_j||^2 / (2 lambda^2))."""
    pts = grid.points
    sq = np.sum(pts**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * lam**2))


def _kernel_mean_unit(grid: PreliminaryGrid, lam: float, gamma: float) -> np.ndarray:
    return np.exp(kernel_mean(grid.points, lam, 0.0, gamma, grid.dim))


def _rcond_1norm(mat: np.ndarray, mat_inv: np.ndarray) -> float:
    return float(
        1.0
        / (np.linalg.norm(mat, 1) * np.linalg.norm(mat_inv, 1))
    )


def _dense_weights(grid: PreliminaryGrid, lam: float, gamma: float, jitter: bool):
    """Solve K w = z at unit precision; returns (w, z, rcond)."""
    k_mat = _gram(grid, lam)
    z_vec = _kernel_mean_unit(grid, lam, gamma)
    if jitter:
        k_mat = k_mat + 1e-12 * np.max(np.diag(k_mat)) * np.eye(k_mat.shape[0])
    try:
        cho = scipy.linalg.cho_factor(k_mat, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise GramNotPD(_svd_rcond(k_mat)) from exc
    k_inv = scipy.linalg.cho_solve(cho, np.eye(k_mat.shape[0]), check_finite=False)
    rcond = _rcond_1norm(k_mat, k_inv)
    w_vec = scipy.linalg.cho_solve(cho, z_vec, check_finite=False)
    return w_vec, z_vec, rcond


def _svd_rcond(mat: np.ndarray) -> float:
    s = np.linalg.svd(mat, compute_uv=False)
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def fskq_orbit_weights(
    grid: PreliminaryGrid,
    lam: float,
    log_alpha: float,
    gamma: float,
) -> np.ndarray:
    """One quadrature weight per orbit from the orbit-reduced linear system.

    Because the kernel is isotropic and the grid fully symmetric, the dense
    weights K^{-1} z are constant within each orbit; the reduced system
    K~_{IJ} = sum_{j in J} k(rep_I, s_j), z~_I = z(rep_I) recovers them with
    one unknown per orbit. Weights are independent of alpha (the precision
    factor cancels).
    """
    reps = np.array([o.points[0] for o in grid.orbits])
    pts = grid.points
    d2 = (
        np.sum(reps**2, axis=1)[:, None]
        + np.sum(pts**2, axis=1)[None, :]
        - 2.0 * (reps @ pts.T)
    )
    np.maximum(d2, 0.0, out=d2)
    kern = np.exp(-d2 / (2.0 * lam**2))
    slices = grid.orbit_slices()
    k_red = np.stack([kern[:, sl].sum(axis=1) for sl in slices], axis=1)
    z_red = np.exp(kernel_mean(reps, lam, 0.0, gamma, grid.dim))
    try:
        w_red = scipy.linalg.solve(k_red, z_red)
    except scipy.linalg.LinAlgError as exc:
        raise ReducedSystemSingular(str(exc)) from exc
    if not np.all(np.isfinite(w_red)):
        raise ReducedSystemSingular("reduced solve produced non-finite weights")
    return w_red


def _fskq_quadratic_terms(grid: PreliminaryGrid, lam: float, gamma: float):
    """(w_dense_expanded-sums, z^T K^{-1} z, rcond of reduced system)."""
    w_red = fskq_orbit_weights(grid, lam, 0.0, gamma)
    sizes = np.array([o.size for o in grid.orbits], dtype=float)
    reps = np.array([o.points[0] for o in grid.orbits])
    z_red = np.exp(kernel_mean(reps, lam, 0.0, gamma, grid.dim))
    ztkz = float(np.sum(sizes * z_red * w_red))
    return w_red, ztkz


def _assemble_posterior(
    delta: float,
    ztkz: float,
    config: DiagnosticConfig,
    approx: GaussianApprox,
    rcond: float,
) -> IntegralPosterior:
    d = config.dim
    lam, gamma = config.lam, config.gamma
    c0_unit = float(np.exp(double_kernel_mean(lam, 0.0, gamma, d)))
    c1_unit = c0_unit - ztkz
    if c1_unit <= 0:
        # posterior variance cannot be negative; tiny negative values are
        # factorization roundoff
        c1_unit = max(c1_unit, 0.0)
    c1_norm = np.exp(-d * config.log_alpha) * c1_unit
    eps = config.z_crit * np.sqrt(c1_norm)
    t_stat = np.abs(delta) / np.sqrt(c1_norm) if c1_norm > 0 else np.inf
    p_value = float(2.0 * ndtr(-t_stat))
    reject = bool(t_stat > config.z_crit)
    log_la = laplace_approx(approx)
    scale = np.exp(approx.log_scale_N - log_la)  # = (2 pi)^{-d/2}
    return IntegralPosterior(
        m1_rel=float(1.0 + delta * scale),
        c1_rel=float(c1_norm * scale**2),
        delta=float(delta),
        epsilon=float(eps),
        log_la=float(log_la),
        p_value=p_value,
        reject=reject,
        rcond=float(rcond),
    )


def posterior(
    config: DiagnosticConfig,
    approx: GaussianApprox,
    residuals: np.ndarray,
    method: str = "auto",
    jitter: bool = False,
):
    """Integral posterior from a config and precomputed residuals.

    ``method`` is 'auto' (dense up to DENSE_POINT_LIMIT points, FSKQ above),
    'dense', or 'fskq'. Returns (IntegralPosterior, per-point weight sums per
    orbit) packed as (post, orbit_contributions) where orbit_contributions[i]
    is sum over the orbit of weight * residual, in N-normalized units.
    """
    grid = config.grid
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != (grid.n,):
        raise DimensionMismatch(
            f"residual vector has shape {residuals.shape}, expected ({grid.n},)"
        )
    if method == "auto":
        method = "dense" if grid.n <= DENSE_POINT_LIMIT else "fskq"
    slices = grid.orbit_slices()
    if method == "dense":
        w_vec, z_vec, rcond = _dense_weights(grid, config.lam, config.gamma, jitter)
        delta = float(w_vec @ residuals)
        ztkz = float(z_vec @ w_vec)
        contrib = np.array([float(w_vec[sl] @ residuals[sl]) for sl in slices])
    elif method == "fskq":
        w_red, ztkz = _fskq_quadratic_terms(grid, config.lam, config.gamma)
        orbit_res = np.array([float(residuals[sl].sum()) for sl in slices])
        contrib = w_red * orbit_res
        delta = float(np.sum(contrib))
        rcond = np.nan
    else:
        raise ValueError(f"unknown solver method {method!r}")
    post = _assemble_posterior(delta, ztkz, config, approx, rcond)
    return post, contrib


@dataclass(frozen=True)
class DiagnosticReport:
    """Full result of one diagnostic run."""

    posterior: IntegralPosterior
    orbit_generators: tuple
    orbit_sizes: tuple
    orbit_contributions: tuple
    n_points: int
    method: str
    lam: float
    gamma: float
    log_alpha: float
    z_crit: float
    grid_family: str
    dim: int
    boundary: bool
    seconds: float

    def to_json(self) -> str:
        doc = asdict(self)
        doc["posterior"] = asdict(self.posterior)
        doc["posterior"]["m1"] = self.posterior.m1
        doc["posterior"]["c1"] = self.posterior.c1
        doc["posterior"]["la"] = self.posterior.la
        return json.dumps(doc, indent=2, sort_keys=True)

    def orbit_table_csv(self, path) -> None:
        """CSV of per-orbit mass contributions (absolute units)."""
        scale = np.exp(self.posterior.log_la) * np.exp(-0.5 * self.dim * _LOG_2PI)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["orbit", "generator", "size", "radius", "contribution"])
            for i, (gen, size, c) in enumerate(
                zip(self.orbit_generators, self.orbit_sizes, self.orbit_contributions)
            ):
                radius = float(np.sqrt(np.sum(np.square(gen)))) if gen else 0.0
                writer.writerow([i, json.dumps(list(gen)), size, radius, c * scale])


def diagnose(
    spec: IntegrandSpec,
    config: DiagnosticConfig,
    method: str = "auto",
    jitter: bool = False,
) -> DiagnosticReport:
    """End-to-end pipeline: standardize, interrogate, condition, decide."""
    if spec.dim != config.dim:
        raise DimensionMismatch(f"spec dim {spec.dim} != config dim {config.dim}")
    start = time.perf_counter()
    approx = gaussian_approx(spec)
    residuals = residual_vector(spec, approx, config.grid, config.gamma)
    post, contrib = posterior(config, approx, residuals, method=method, jitter=jitter)
    elapsed = time.perf_counter() - start
    if post.epsilon > 0:
        boundary = bool(abs(abs(post.delta) - post.epsilon) <= 1e-10 * post.epsilon)
    else:
        boundary = post.delta == 0.0
    used = method
    if used == "auto":
        used = "dense" if config.grid.n <= DENSE_POINT_LIMIT else "fskq"
    return DiagnosticReport(
        posterior=post,
        orbit_generators=tuple(o.generator for o in config.grid.orbits),
        orbit_sizes=tuple(o.size for o in config.grid.orbits),
        orbit_contributions=tuple(float(c) for c in contrib),
        n_points=config.grid.n,
        method=used,
        lam=config.lam,
        gamma=config.gamma,
        log_alpha=config.log_alpha,
        z_crit=config.z_crit,
        grid_family=config.grid.family,
        dim=config.dim,
        boundary=boundary,
        seconds=elapsed,
    )
