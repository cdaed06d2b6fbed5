"""Integrand representation, Gaussian/Laplace approximation, built-in test functions.

All function values flow through the system as log-values: ratios such as
f(s)/f(x_hat) are computed as exp(log f(s) - log f(x_hat)). In high dimensions
the raw density values underflow, and only relative values matter for the
diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import NonFiniteHessian, NotNegativeDefinite

__all__ = [
    "IntegrandSpec",
    "GaussianApprox",
    "gaussian_approx",
    "laplace_approx",
    "finite_difference_hessian",
    "mvt_log_density",
    "mvt_laplace",
    "banana_log_density",
    "product_t_log_density",
    "product_t_integral",
    "gaussian_spec",
    "mvt_spec",
    "banana_spec",
    "product_t_spec",
    "builtin_spec",
    "eval_log_f",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class IntegrandSpec:
    """A positive integrand given by its log-values, mode, and log-Hessian.

    Parameters
    ----------
    dim : int
        Dimension d of the domain.
    log_f : callable
        Maps a point in R^d (or an (n, d) batch) to log f. -inf is allowed;
        +inf and NaN are evaluation errors. Must be safe to call concurrently.
    mode : ndarray
        The maximizer x_hat of f. Never searched for internally.
    hessian : ndarray
        d x d Hessian of log f at the mode; symmetrized on ingest, must be
        negative definite.
    """

    dim: int
    log_f: Callable[[np.ndarray], np.ndarray]
    mode: np.ndarray
    hessian: np.ndarray

    def __post_init__(self):
        mode = np.atleast_1d(np.asarray(self.mode, dtype=float))
        hess = np.asarray(self.hessian, dtype=float)
        if mode.shape != (self.dim,):
            raise ValueError(f"mode must have shape ({self.dim},), got {mode.shape}")
        if hess.shape != (self.dim, self.dim):
            raise ValueError(f"hessian must be {self.dim}x{self.dim}, got {hess.shape}")
        if not np.all(np.isfinite(hess)):
            raise NonFiniteHessian("hessian contains non-finite entries")
        asym = np.abs(hess - hess.T).max()
        scale = max(np.abs(hess).max(), 1.0)
        if asym > 1e-10 * scale:
            raise ValueError(f"hessian is not symmetric (max asymmetry {asym:.3e})")
        hess = 0.5 * (hess + hess.T)
        eigs = np.linalg.eigvalsh(hess)
        if eigs.max() >= -1e-12 * np.abs(eigs).max():
            raise NotNegativeDefinite(f"hessian eigenvalues {eigs} are not all negative")
        lf_mode = float(np.ravel(self.log_f(mode))[0])
        if not np.isfinite(lf_mode):
            raise ValueError(f"log_f(mode) = {lf_mode} is not finite")
        object.__setattr__(self, "mode", mode)
        object.__setattr__(self, "hessian", hess)


@dataclass(frozen=True)
class GaussianApprox:
    """Eigendecomposition products of -H^{-1} for a given integrand.

    ``transform`` is T = V sqrt(D) with -H^{-1} = V diag(D) V^T; it maps
    standardized (preliminary-grid) coordinates to original coordinates via
    x = T s + mode. ``log_scale_N`` is log f(x_hat) + 0.5 log det(-H^{-1}),
    the log of the scale factor N carried symbolically through the posterior
    algebra.
    """

    dim: int
    mode: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    transform: np.ndarray
    log_det_neg_hinv: float
    log_f_mode: float
    log_scale_N: float

    def standardize(self, x: np.ndarray) -> np.ndarray:
        """Map original coordinates to standardized ones: T^{-1}(x - mode)."""
        x = np.asarray(x, dtype=float)
        centered = x - self.mode
        # T^{-1} = D^{-1/2} V^T
        return (centered @ self.eigvecs) / np.sqrt(self.eigvals)


def _fix_eigvec_signs(vecs: np.ndarray) -> np.ndarray:
    """Make the first nonzero component of each eigenvector positive."""
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if nz.size and col[nz[0]] < 0:
            vecs[:, j] = -col
    return vecs


def gaussian_approx(spec: IntegrandSpec) -> GaussianApprox:
    """Eigendecomposition products of -H^{-1} for ``spec``.

    Eigenvalues are sorted descending (fixing the principal-component order)
    with eigenvector signs normalized so results are deterministic.
    """
    h_eigs, h_vecs = np.linalg.eigh(spec.hessian)
    if h_eigs.max() >= -1e-12 * np.abs(h_eigs).max():
        raise NotNegativeDefinite(f"hessian eigenvalues {h_eigs} are not all negative")
    # eigenvalues of -H^{-1} are -1/h
    d_vals = -1.0 / h_eigs
    order = np.argsort(-d_vals, kind="stable")
    d_vals = d_vals[order]
    vecs = _fix_eigvec_signs(h_vecs[:, order])
    transform = vecs * np.sqrt(d_vals)
    log_det = float(np.sum(np.log(d_vals)))
    lf_mode = float(np.ravel(spec.log_f(spec.mode))[0])
    return GaussianApprox(
        dim=spec.dim,
        mode=spec.mode,
        eigvecs=vecs,
        eigvals=d_vals,
        transform=transform,
        log_det_neg_hinv=log_det,
        log_f_mode=lf_mode,
        log_scale_N=lf_mode + 0.5 * log_det,
    )


def laplace_approx(approx: GaussianApprox) -> float:
    """log L(f) = log f(x_hat) + (d/2) log(2 pi) + 0.5 log det(-H^{-1})."""
    return approx.log_f_mode + 0.5 * approx.dim * _LOG_2PI + 0.5 * approx.log_det_neg_hinv


def finite_difference_hessian(
    log_f: Callable[[np.ndarray], float],
    mode: np.ndarray,
    scale_hint: float | np.ndarray = 1.0,
    step: float = 1e-4,
) -> np.ndarray:
    """Central-difference Hessian of log_f at ``mode``.

    ``scale_hint`` sets the per-coordinate scale; the actual step is
    step * sqrt(scale_hint) in each coordinate.
    """
    mode = np.atleast_1d(np.asarray(mode, dtype=float))
    d = mode.size
    h = step * np.sqrt(np.broadcast_to(np.asarray(scale_hint, dtype=float), (d,)))
    hess = np.empty((d, d))
    f0 = float(log_f(mode))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (float(log_f(mode + ei)) - 2.0 * f0 + float(log_f(mode - ei))) / h[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            fpp = float(log_f(mode + ei + ej))
            fpm = float(log_f(mode + ei - ej))
            fmp = float(log_f(mode - ei + ej))
            fmm = float(log_f(mode - ei - ej))
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return hess


def eval_log_f(spec: IntegrandSpec, points: np.ndarray) -> np.ndarray:
    """Evaluate spec.log_f on an (n, d) batch, falling back to a row loop."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    try:
        vals = np.asarray(spec.log_f(points), dtype=float)
        if vals.shape == (points.shape[0],):
            return vals
    except Exception:
        pass
    return np.array([float(spec.log_f(p)) for p in points])


# ---------------------------------------------------------------------------
# built-in densities
# ---------------------------------------------------------------------------


def mvt_log_density(x: np.ndarray, nu: float, d: int) -> np.ndarray:
    """Log density of the standard d-dimensional multivariate t.

    The normalizer uses (nu pi)^{d/2}; the alternative sqrt(nu pi) found in
    some sources does not integrate to one for d > 1.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, dtype=float)
    sq = np.sum(np.atleast_2d(x) ** 2, axis=-1)
    const = (
        gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu) - 0.5 * d * np.log(nu * np.pi)
    )
    out = const - 0.5 * (nu + d) * np.log1p(sq / nu)
    return out if x.ndim > 1 else float(out[0])


def mvt_laplace(nu: float, d: int) -> float:
    """Laplace approximation (2/(nu+d))^{d/2} Gamma((nu+d)/2)/Gamma(nu/2).

    Computed via log-gamma; always below the true integral of 1.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    log_val = (
        0.5 * d * (np.log(2.0) - np.log(nu + d))
        + gammaln(0.5 * (nu + d))
        - gammaln(0.5 * nu)
    )
    return float(np.exp(log_val))


def banana_log_density(x: np.ndarray) -> np.ndarray:
    """Log of the 2-D banana-shaped density.

    A centered bivariate Gaussian with covariance diag(3, 1) whose second
    coordinate is twisted by x2 -> x2 - (x1^2 - 3)/2. Integrates to 1 and has
    its mode at (0, -1.5).
    """
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    x1 = pts[..., 0]
    u = pts[..., 1] - 0.5 * (x1**2 - 3.0)
    out = -_LOG_2PI - 0.5 * np.log(3.0) - x1**2 / 6.0 - u**2 / 2.0
    return out if x.ndim > 1 else float(out[0])


def product_t_log_density(x: np.ndarray, nu: float, d: int) -> np.ndarray:
    """Log of the product-form t-like counterexample density.

    Shares the multivariate t's normalizer (applied once), so the two
    functions agree exactly at the mode and along the coordinate axes while
    differing off-axis. Its true integral differs from 1 (see
    :func:`product_t_integral`).
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    const = (
        gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu) - 0.5 * d * np.log(nu * np.pi)
    )
    out = const - 0.5 * (nu + d) * np.sum(np.log1p(pts**2 / nu), axis=-1)
    return out if x.ndim > 1 else float(out[0])


def product_t_integral(nu: float, d: int) -> float:
    """Closed-form integral of the product-form counterexample, via log-gamma."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    log_val = (
        d * gammaln(0.5 * (nu + d - 1))
        - gammaln(0.5 * nu)
        - (d - 1) * gammaln(0.5 * (nu + d))
    )
    return float(np.exp(log_val))


# ---------------------------------------------------------------------------
# IntegrandSpec constructors for the builtins
# ---------------------------------------------------------------------------


def gaussian_spec(d: int, log_scale: float = 0.0) -> IntegrandSpec:
    """exp(log_scale) times the standard Gaussian density in d dimensions."""

    def log_f(x, _d=d, _s=log_scale):
        x = np.asarray(x, dtype=float)
        sq = np.sum(np.atleast_2d(x) ** 2, axis=-1)
        out = _s - 0.5 * _d * _LOG_2PI - 0.5 * sq
        return out if x.ndim > 1 else float(out[0])

    return IntegrandSpec(dim=d, log_f=log_f, mode=np.zeros(d), hessian=-np.eye(d))


def mvt_spec(nu: float, d: int) -> IntegrandSpec:
    """Standard multivariate t density as an IntegrandSpec."""
    hess = -((nu + d) / nu) * np.eye(d)
    return IntegrandSpec(
        dim=d,
        log_f=lambda x: mvt_log_density(x, nu, d),
        mode=np.zeros(d),
        hessian=hess,
    )


def banana_spec() -> IntegrandSpec:
    """The 2-D banana-shaped density as an IntegrandSpec."""
    return IntegrandSpec(
        dim=2,
        log_f=banana_log_density,
        mode=np.array([0.0, -1.5]),
        hessian=np.diag([-1.0 / 3.0, -1.0]),
    )


def product_t_spec(nu: float, d: int) -> IntegrandSpec:
    """Product-form counterexample as an IntegrandSpec; same mode/Hessian as mvt."""
    hess = -((nu + d) / nu) * np.eye(d)
    return IntegrandSpec(
        dim=d,
        log_f=lambda x: product_t_log_density(x, nu, d),
        mode=np.zeros(d),
        hessian=hess,
    )


def builtin_spec(name: str) -> IntegrandSpec:
    """Parse a builtin name like 'banana', 'gaussian:d=5', 'mvt:nu=38,d=2'."""
    base, _, argstr = name.partition(":")
    kwargs = {}
    if argstr:
        for part in argstr.split(","):
            key, _, val = part.partition("=")
            kwargs[key.strip()] = float(val)
    if base == "banana":
        return banana_spec()
    if base == "gaussian":
        return gaussian_spec(int(kwargs.get("d", 2)))
    if base == "mvt":
        return mvt_spec(kwargs["nu"], int(kwargs["d"]))
    if base == "product_t":
        return product_t_spec(kwargs["nu"], int(kwargs["d"]))
    raise ValueError(f"unknown builtin integrand {name!r}")
