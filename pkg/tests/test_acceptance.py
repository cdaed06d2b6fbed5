"""Acceptance suite: one test per published criterion.

Each test evaluates its clauses, records a single machine-readable
``ACnn PASS/FAIL`` line for the terminal summary, and fails if any clause
fails. Reference values are checked at the tolerances at which they were
published.
"""

import math
import time

import numpy as np
import pytest

from laplace_gauge.calibration import (
    calibrate_lambda_l2,
    find_nu,
    gamma_rule,
    solve_alpha,
)
from laplace_gauge.engine import (
    DiagnosticConfig,
    diagnose,
    double_kernel_mean,
    fskq_orbit_weights,
    kernel_mean,
    posterior,
    residual_vector,
    _dense_weights,
)
from laplace_gauge.grids import ckf_grid, cross2d_grid, gh2_grid
from laplace_gauge.integrand import (
    IntegrandSpec,
    banana_log_density,
    banana_spec,
    eval_log_f,
    gaussian_approx,
    gaussian_spec,
    laplace_approx,
    mvt_laplace,
    mvt_log_density,
    mvt_spec,
    product_t_integral,
    product_t_spec,
)
from laplace_gauge.oracles import importance_sample, riemann_integrate

GAMMA_2D = 1.2734
LAMBDA_2D = 4.2241
ALPHA_2D = 0.023142
GAMMA_72 = 1.2248
LAMBDA_72 = 3.7


def _finish(recorder, number, summary, clauses):
    failed = [label for label, ok in clauses if not ok]
    status = "FAIL" if failed else "PASS"
    line = f"AC{number:02d} {status}: {summary}"
    if failed:
        line += " [failed: " + ", ".join(failed) + "]"
    recorder(line)
    print(line)
    assert not failed, line


def _mvt38_posterior(lam, gamma, log_alpha):
    spec = mvt_spec(38, 2)
    approx = gaussian_approx(spec)
    grid = cross2d_grid()
    res = residual_vector(spec, approx, grid, gamma)
    config = DiagnosticConfig(
        dim=2, grid=grid, lam=lam, gamma=gamma, log_alpha=log_alpha
    )
    post, _ = posterior(config, approx, res)
    return post


class TestAcceptance:
    def test_ac01_nu_search(self, acceptance_recorder):
        nu2 = find_nu(2)
        ratio = mvt_laplace(38, 2)
        nu72 = find_nu(72)
        _finish(
            acceptance_recorder,
            1,
            f"find_nu(2)={nu2} ratio={ratio:.15f} find_nu(72)={nu72}",
            [
                ("find_nu(2)==38", nu2 == 38),
                ("ratio 0.95 to 1e-12", abs(ratio - 0.95) <= 1e-12),
                ("find_nu(72)==25921", nu72 == 25921),
            ],
        )

    def test_ac02_gamma_rule(self, acceptance_recorder):
        g2 = gamma_rule(38, 2)
        g72 = gamma_rule(25921, 72)
        _finish(
            acceptance_recorder,
            2,
            f"gamma(38,2)={g2:.6f} gamma(25921,72)={g72:.6f}",
            [
                ("gamma(38,2)=1.2734+-1e-4", abs(g2 - 1.2734) <= 1e-4),
                ("gamma(25921,72)=1.2248+-1e-4", abs(g72 - 1.2248) <= 1e-4),
            ],
        )

    def test_ac03_calibrated_2d(self, acceptance_recorder):
        start = time.perf_counter()
        log_alpha = solve_alpha(cross2d_grid(), 38, 2, GAMMA_2D, LAMBDA_2D)
        post = _mvt38_posterior(LAMBDA_2D, GAMMA_2D, log_alpha)
        elapsed = time.perf_counter() - start
        alpha = math.exp(log_alpha)
        _finish(
            acceptance_recorder,
            3,
            f"m1={post.m1:.6f} alpha={alpha:.6f} c1={post.c1:.5e} "
            f"({elapsed:.2f}s)",
            [
                ("m1=0.99095+-1e-3", abs(post.m1 - 0.99095) <= 1e-3),
                ("alpha=0.023142+-1e-3", abs(alpha - 0.023142) <= 1e-3),
                ("c1=4.3653e-4 within 2%", abs(post.c1 / 4.3653e-4 - 1) <= 0.02),
                ("runtime < 1 s", elapsed < 1.0),
            ],
        )

    def test_ac04_undersmoothed_2d(self, acceptance_recorder):
        post = _mvt38_posterior(0.0729, GAMMA_2D, math.log(25.2372))
        _finish(
            acceptance_recorder,
            4,
            f"m1={post.m1:.6f} c1={post.c1:.5e}",
            [
                ("m1 within 1e-3 of 0.95", abs(post.m1 - 0.95) <= 1e-3),
                ("c1=5.7369e-8 within 5%", abs(post.c1 / 5.7369e-8 - 1) <= 0.05),
            ],
        )

    def test_ac05_oversmoothed_2d(self, acceptance_recorder):
        post = _mvt38_posterior(1.3, 3.0, 0.0)
        lam_opt = calibrate_lambda_l2(cross2d_grid(), 38, 2, 3.0, step=0.02)
        _finish(
            acceptance_recorder,
            5,
            f"m1={post.m1:.6f} lambda_opt(gamma=3)={lam_opt:.5f}",
            [
                ("m1=0.98108+-1e-3", abs(post.m1 - 0.98108) <= 1e-3),
                ("lambda_opt=1.1953+-0.05", abs(lam_opt - 1.1953) <= 0.05),
            ],
        )

    def test_ac06_l2_optimizer(self, acceptance_recorder):
        start = time.perf_counter()
        lam_opt = calibrate_lambda_l2(cross2d_grid(), 38, 2, GAMMA_2D, step=0.02)
        elapsed = time.perf_counter() - start
        _finish(
            acceptance_recorder,
            6,
            f"lambda_opt={lam_opt:.5f} ({elapsed:.1f}s)",
            [
                ("lambda within 0.05 of 4.2241", abs(lam_opt - 4.2241) <= 0.05),
                ("runtime < 2 min", elapsed < 120.0),
            ],
        )

    def test_ac07_banana(self, acceptance_recorder):
        start = time.perf_counter()
        spec = banana_spec()
        la = math.exp(laplace_approx(gaussian_approx(spec)))
        config = DiagnosticConfig(
            dim=2,
            grid=cross2d_grid(),
            lam=LAMBDA_2D,
            gamma=GAMMA_2D,
            log_alpha=math.log(ALPHA_2D),
        )
        report = diagnose(spec, config)
        post = report.posterior
        elapsed = time.perf_counter() - start
        _finish(
            acceptance_recorder,
            7,
            f"la={la:.12f} m1={post.m1:.6f} p={post.p_value:.3e} "
            f"reject={post.reject} ({elapsed:.2f}s)",
            [
                ("la=1 to 1e-10", abs(la - 1.0) <= 1e-10),
                ("m1=0.3658+-1e-3", abs(post.m1 - 0.3658) <= 1e-3),
                ("decision=reject", bool(post.reject)),
                ("p<0.05", post.p_value < 0.05),
                ("runtime < 1 s", elapsed < 1.0),
            ],
        )

    def test_ac08_conditioning(self, acceptance_recorder):
        grid = cross2d_grid()
        spec = mvt_spec(38, 2)
        approx = gaussian_approx(spec)
        res = residual_vector(spec, approx, grid, GAMMA_2D)

        def rcond_at(lam):
            config = DiagnosticConfig(
                dim=2, grid=grid, lam=lam, gamma=GAMMA_2D, log_alpha=0.0
            )
            post, _ = posterior(config, approx, res)
            return post.rcond

        r_opt = rcond_at(LAMBDA_2D)
        r_wide = rcond_at(9.0)
        _finish(
            acceptance_recorder,
            8,
            f"rcond(4.2241)={r_opt:.4e} rcond(9)={r_wide:.4e}",
            [
                (
                    "rcond(4.2241)=7.1579e-10 within 5x",
                    0.2 <= r_opt / 7.1579e-10 <= 5.0,
                ),
                (
                    "rcond(9)=7.7885e-14 within 5x",
                    0.2 <= r_wide / 7.7885e-14 <= 5.0,
                ),
            ],
        )

    def test_ac09_ckf72_calibration(self, acceptance_recorder):
        start = time.perf_counter()
        grid = ckf_grid(72)
        spec = mvt_spec(25921, 72)
        approx = gaussian_approx(spec)
        res = residual_vector(spec, approx, grid, GAMMA_72)
        config = DiagnosticConfig(
            dim=72, grid=grid, lam=LAMBDA_72, gamma=GAMMA_72, log_alpha=0.0
        )
        post, _ = posterior(config, approx, res)
        alpha = math.exp(solve_alpha(grid, 25921, 72, GAMMA_72, LAMBDA_72))
        elapsed = time.perf_counter() - start
        _finish(
            acceptance_recorder,
            9,
            f"m1={post.m1:.6f} alpha={alpha:.6f} ({elapsed:.2f}s)",
            [
                ("m1=0.998+-1e-3", abs(post.m1 - 0.998) <= 1e-3),
                ("alpha=0.1565+-1e-3", abs(alpha - 0.1565) <= 1e-3),
                ("runtime < 5 s", elapsed < 5.0),
            ],
        )

    def test_ac10_product_t(self, acceptance_recorder):
        integral = product_t_integral(25921, 72)
        grid = ckf_grid(72)  # axis-only interrogation points
        config = DiagnosticConfig(
            dim=72, grid=grid, lam=LAMBDA_72, gamma=GAMMA_72, log_alpha=0.0
        )

        def delta_of(spec):
            approx = gaussian_approx(spec)
            res = residual_vector(spec, approx, grid, GAMMA_72)
            post, _ = posterior(config, approx, res)
            return post.delta

        d_product = delta_of(product_t_spec(25921, 72))
        d_radial = delta_of(mvt_spec(25921, 72))
        rel = abs(d_product - d_radial) / abs(d_radial)
        _finish(
            acceptance_recorder,
            10,
            f"integral={integral:.6f} delta_rel_diff={rel:.2e}",
            [
                ("integral=0.952+-5e-4", abs(integral - 0.952) <= 5e-4),
                ("identical delta to 1e-10", rel <= 1e-10),
            ],
        )

    def test_ac11_gh72(self, acceptance_recorder):
        start = time.perf_counter()
        grid = gh2_grid(72, 3.6)
        radii = [orbit.radius for orbit in grid.orbits]
        nearest = grid.orbits[int(np.argmin(radii))]
        spec = mvt_spec(25921, 72)
        approx = gaussian_approx(spec)
        res = residual_vector(spec, approx, grid, GAMMA_72)
        config = DiagnosticConfig(
            dim=72,
            grid=grid,
            lam=LAMBDA_72,
            gamma=GAMMA_72,
            log_alpha=math.log(0.1349),
        )
        post, method = posterior(config, approx, res, method="fskq")
        elapsed = time.perf_counter() - start
        _finish(
            acceptance_recorder,
            11,
            f"n={grid.n} nearest_orbit={nearest.size} m1={post.m1:.6f} "
            f"({elapsed:.2f}s)",
            [
                ("n==10512", grid.n == 10512),
                ("nearest orbit has 144 points", nearest.size == 144),
                ("m1=0.9945+-1e-3", abs(post.m1 - 0.9945) <= 1e-3),
                ("runtime < 30 s", elapsed < 30.0),
            ],
        )

    def test_ac12_fskq_dense_equivalence(self, acceptance_recorder):
        worst_match = 0.0
        worst_const = 0.0
        for d in (2, 3, 5):
            for grid in (ckf_grid(d), gh2_grid(d)):
                w_dense, _, _ = _dense_weights(grid, 1.7, 1.25, jitter=False)
                w_orbit = fskq_orbit_weights(grid, 1.7, 0.0, 1.25)
                for idx, sl in enumerate(grid.orbit_slices()):
                    block = w_dense[sl]
                    scale = max(abs(block[0]), 1e-300)
                    worst_const = max(
                        worst_const, np.max(np.abs(block - block[0])) / scale
                    )
                    worst_match = max(
                        worst_match, abs(block[0] - w_orbit[idx]) / scale
                    )
        _finish(
            acceptance_recorder,
            12,
            f"max_fskq_dense_rel={worst_match:.2e} "
            f"max_orbit_spread_rel={worst_const:.2e}",
            [
                ("fskq matches dense to 1e-8", worst_match <= 1e-8),
                ("dense weights orbit-constant to 1e-8", worst_const <= 1e-8),
            ],
        )

    def test_ac13_embedding_oracle(self, acceptance_recorder):
        rng = np.random.default_rng(2026)
        step = 0.05
        worst_single = 0.0
        worst_double = 0.0
        for _ in range(20):
            lam = rng.uniform(0.5, 3.0)
            gamma = rng.uniform(0.7, 2.0)
            for d in (1, 2):
                s = rng.uniform(-2.0, 2.0, size=d)
                axis = np.arange(-8.0 * gamma, 8.0 * gamma, step) + step / 2.0
                dens = (
                    (2 * np.pi * gamma**2) ** -0.5
                    * np.exp(-(axis**2) / (2 * gamma**2))
                    * step
                )
                # per-coordinate factors; both embeddings are products of
                # one-dimensional integrals against the same axis rule
                single = np.prod(
                    [
                        np.sum(np.exp(-((axis - sj) ** 2) / (2 * lam**2)) * dens)
                        for sj in s
                    ]
                )
                gram = np.exp(
                    -((axis[:, None] - axis[None, :]) ** 2) / (2 * lam**2)
                )
                double = float(dens @ gram @ dens) ** d
                worst_single = max(
                    worst_single,
                    abs(math.exp(kernel_mean(s, lam, 0.0, gamma, d)) / single - 1),
                )
                worst_double = max(
                    worst_double,
                    abs(math.exp(double_kernel_mean(lam, 0.0, gamma, d)) / double - 1),
                )
        _finish(
            acceptance_recorder,
            13,
            f"max_rel_err single={worst_single:.2e} double={worst_double:.2e}",
            [
                ("kernel_mean to 1e-6", worst_single <= 1e-6),
                ("double_kernel_mean to 1e-6", worst_double <= 1e-6),
            ],
        )

    @staticmethod
    def _posterior_for_spec(spec):
        approx = gaussian_approx(spec)
        grid = cross2d_grid()
        res = residual_vector(spec, approx, grid, GAMMA_2D)
        config = DiagnosticConfig(
            dim=2,
            grid=grid,
            lam=LAMBDA_2D,
            gamma=GAMMA_2D,
            log_alpha=math.log(ALPHA_2D),
        )
        post, _ = posterior(config, approx, res)
        return post

    @staticmethod
    def _transformed_spec(base_spec, base_log_f, a, shift, log_scale):
        a_inv = np.linalg.inv(a)
        _, log_det = np.linalg.slogdet(a)

        def log_f(x):
            pts = np.atleast_2d(np.asarray(x, dtype=float))
            y = (pts - shift) @ a_inv.T
            return base_log_f(y) - log_det + log_scale

        return IntegrandSpec(
            dim=2,
            log_f=log_f,
            mode=shift + a @ base_spec.mode,
            hessian=a_inv.T @ base_spec.hessian @ a_inv,
        )

    def test_ac14_invariance(self, acceptance_recorder):
        rng = np.random.default_rng(14)
        worst = 0.0
        disagreements = 0
        cases = [
            ("mvt", lambda y: mvt_log_density(y, 38, 2), mvt_spec(38, 2)),
            ("banana", banana_log_density, banana_spec()),
        ]
        for name, base_log_f, base_spec in cases:
            base = self._posterior_for_spec(base_spec)
            for _ in range(10):
                if name == "mvt":
                    # radial target: any invertible affine reparametrization
                    a = np.eye(2) + 0.4 * rng.standard_normal((2, 2))
                else:
                    # the twist is axis-bound, so reparametrize per-axis while
                    # keeping the principal-axis ordering of -H^{-1}
                    a = np.diag([rng.uniform(0.8, 1.5), rng.uniform(0.7, 1.3)])
                shift = rng.uniform(-2.0, 2.0, size=2)
                spec = self._transformed_spec(
                    base_spec, base_log_f, a, shift, rng.uniform(-3.0, 3.0)
                )
                post = self._posterior_for_spec(spec)
                for value, reference in (
                    (post.delta, base.delta),
                    (post.m1_rel, base.m1_rel),
                    (post.c1_rel, base.c1_rel),
                    (post.p_value, base.p_value),
                ):
                    if reference != 0.0:
                        worst = max(worst, abs(value / reference - 1))
                disagreements += int(post.reject != base.reject)
        _finish(
            acceptance_recorder,
            14,
            f"max_rel_change={worst:.2e} decision_flips={disagreements}",
            [
                ("invariant to 1e-8", worst <= 1e-8),
                ("decision unchanged", disagreements == 0),
            ],
        )

    def test_ac15_representation_equivalence(self, acceptance_recorder):
        rng = np.random.default_rng(15)
        spec = mvt_spec(38, 2)
        approx = gaussian_approx(spec)
        grid = cross2d_grid()
        config = DiagnosticConfig(
            dim=2,
            grid=grid,
            lam=LAMBDA_2D,
            gamma=GAMMA_2D,
            log_alpha=math.log(ALPHA_2D),
        )
        disagreements = 0
        for _ in range(100):
            scale = 10.0 ** rng.uniform(-6.0, 1.0)
            res = scale * rng.standard_normal(grid.n)
            post, _ = posterior(config, approx, res)
            views = {
                post.reject,
                abs(post.delta) > post.epsilon,
                post.p_value < 0.05,
            }
            disagreements += int(len(views) != 1)
        _finish(
            acceptance_recorder,
            15,
            f"disagreements={disagreements}/100",
            [("zero disagreements", disagreements == 0)],
        )

    def test_ac16_oracles(self, acceptance_recorder):
        targets = [
            ("mvt(38,2)", mvt_spec(38, 2)),
            ("banana", banana_spec()),
            ("gaussian-5d", gaussian_spec(5)),
        ]
        clauses = []
        notes = []
        for name, spec in targets:
            result = importance_sample(spec, 100_000, df=5.0, seed=16)
            gap = abs(result.estimate - 1.0)
            clauses.append((f"IS covers 1 for {name}", gap <= 3 * result.std_error))
            notes.append(f"{name}={result.estimate:.5f}+-{result.std_error:.1e}")
        banana = riemann_integrate(
            lambda x: eval_log_f(banana_spec(), x), 2, 40.0, 0.05
        )
        clauses.append(("riemann banana = 1+-1e-3", abs(banana - 1.0) <= 1e-3))
        notes.append(f"riemann_banana={banana:.6f}")
        _finish(acceptance_recorder, 16, " ".join(notes), clauses)
