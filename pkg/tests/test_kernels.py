import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from selftransport.errors import DomainError, QuadratureError
from selftransport.kernels import (
    D,
    H,
    HorizontalBarrier,
    KernelConfig,
    KernelTable,
    VerticalBarrier,
    barrier_profile,
    cauchy_asymptotic,
    gamma_coeff,
    phi,
    table,
)

# frozen via adaptive Gauss-Kronrod quadrature of the defining integral;
# equals 1 - 2/pi in closed form
H10_2D = 0.3633802276324187

SQRT2 = np.sqrt(2.0)


def quad_h(y, x):
    def f(t):
        a = 2.0 - np.cos(t)
        return np.cos(x * t) * (a - np.sqrt(a * a - 1.0)) ** y

    v, _ = quad(f, 0.0, np.pi, limit=800, epsabs=1e-15, epsrel=1e-13)
    return v / np.pi


class TestPhi:
    def test_theta_zero(self):
        assert phi(0.0) == pytest.approx(1.0, abs=1e-15)

    def test_theta_pi(self):
        assert phi(np.pi) == pytest.approx(3.0 - 2.0 * SQRT2, abs=1e-14)

    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_origin_any_dimension(self, d):
        assert phi(np.zeros(d - 1), d=d) == pytest.approx(1.0, abs=1e-15)

    def test_lambda_one_matches_base_form(self):
        th = np.linspace(-np.pi, np.pi, 257)
        direct = 2.0 - np.cos(th) - np.sqrt((2.0 - np.cos(th)) ** 2 - 1.0)
        assert np.max(np.abs(phi(th, lam=1.0) - direct)) < 1e-13

    def test_lambda_domain(self):
        with pytest.raises(DomainError):
            phi(0.3, lam=0.0)
        with pytest.raises(DomainError):
            phi(0.3, lam=1.5)

    @given(
        st.floats(min_value=-np.pi, max_value=np.pi),
        st.floats(min_value=0.05, max_value=1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_range(self, theta, lam):
        v = phi(theta, lam=lam)
        assert 0.0 < v <= 1.0

    def test_quadratic_identity_grid(self):
        # phi^2 - lambda_h*phi + 1 = 0 with lambda_h = 4 - 2 cos(theta)
        th = 2.0 * np.pi * np.arange(4096) / 4096
        ph = phi(th)
        lam_h = 4.0 - 2.0 * np.cos(th)
        assert np.max(np.abs(ph * ph - lam_h * ph + 1.0)) < 1e-12

    def test_quadratic_identity_3d(self):
        rng = np.random.default_rng(7)
        th = rng.uniform(-np.pi, np.pi, size=(500, 2))
        ph = phi(th, d=3)
        lam_h = 6.0 - 2.0 * np.sum(np.cos(th), axis=-1)
        assert np.max(np.abs(ph * ph - lam_h * ph + 1.0)) < 1e-12


class TestGamma:
    def test_zero_convention(self):
        assert gamma_coeff(0, 3, 0.7) == 0.0
        assert gamma_coeff(3, 0, 0.7) == 0.0
        assert gamma_coeff(-2, 5, 0.7) == 0.0

    def test_single_term(self):
        th = 1.3
        assert gamma_coeff(1, 1, th) == pytest.approx(phi(th), abs=1e-15)
        assert gamma_coeff(2, 1, th) == pytest.approx(phi(th) ** 2, abs=1e-15)

    def test_recurrence_grid(self):
        # gamma^{(y+1)} - lambda_h*gamma^{(y)} + gamma^{(y-1)} = -delta_{y,y'}
        th = 2.0 * np.pi * np.arange(4096) / 4096
        lam_h = 4.0 - 2.0 * np.cos(th)
        for yprime in (1, 3, 7):
            for y in range(1, 12):
                lhs = (
                    gamma_coeff(y + 1, yprime, th)
                    - lam_h * gamma_coeff(y, yprime, th)
                    + gamma_coeff(y - 1, yprime, th)
                )
                target = -1.0 if y == yprime else 0.0
                assert np.max(np.abs(lhs - target)) < 1e-12


class TestBarrierProfile:
    def test_absorbing_substitution(self):
        th, nn = 2.1, 4
        ph = phi(th)
        expected = (1 - ph ** (2 * nn + 2 - 2 * nn)) / (1 - ph ** (2 * nn + 2)) * ph**nn
        assert barrier_profile(nn, th, nn, "abs") == pytest.approx(expected, rel=1e-13)

    def test_absorbing_unit_level_pi(self):
        ph = 3.0 - 2.0 * SQRT2
        assert barrier_profile(1, np.pi, 1, "abs") == pytest.approx(
            ph / (1 + ph * ph), rel=1e-13
        )

    def test_far_barrier_limit(self):
        th = 0.9
        ph = phi(th)
        for y in (1, 2, 5):
            assert barrier_profile(y, th, 4000, "abs") == pytest.approx(ph**y, rel=1e-10)
            assert barrier_profile(y, th, 4000, "ref") == pytest.approx(ph**y, rel=1e-10)

    def test_monotone_bracket(self):
        th = np.linspace(0.05, np.pi, 40)
        nn = 6
        for y in range(1, nn + 1):
            fa = barrier_profile(y, th, nn, "abs")
            fr = barrier_profile(y, th, nn, "ref")
            py = phi(th) ** y
            assert np.all(fa < py)
            assert np.all(py < fr)

    def test_domain(self):
        with pytest.raises(DomainError):
            barrier_profile(5, 0.3, 4, "abs")

    def test_phi_one_limits(self):
        assert barrier_profile(3, 0.0, 9, "abs") == pytest.approx(7.0 / 10.0, abs=1e-13)
        assert barrier_profile(3, 0.0, 9, "ref") == pytest.approx(1.0, abs=1e-13)


class TestH:
    def test_unit_impulse_level_zero(self):
        t = table(KernelConfig(d=2))
        assert t.H(0, 0) == 1.0
        assert t.H(0, 5) == 0.0

    def test_row_sum_is_one(self):
        t = table(KernelConfig(d=2))
        row = t.h_row(1)
        assert np.sum(row) == pytest.approx(1.0, abs=1e-12)
        row3 = t.h_row(3)
        assert np.sum(row3) == pytest.approx(1.0, abs=1e-12)

    def test_reference_value(self):
        t = table(KernelConfig(d=2))
        assert t.H(1, 0) == pytest.approx(H10_2D, abs=1e-12)

    def test_against_independent_quadrature(self):
        t = table(KernelConfig(d=2))
        for (y, x) in [(1, 1), (2, 0), (3, 7), (5, 2)]:
            assert t.H(y, x) == pytest.approx(quad_h(y, x), abs=1e-10)

    def test_reflection_and_parity(self):
        t = table(KernelConfig(d=2))
        assert t.H(-2, 3) == pytest.approx(t.H(2, 3), abs=1e-15)
        assert t.H(2, -3) == pytest.approx(t.H(2, 3), abs=1e-15)

    def test_values_in_unit_interval(self):
        t = table(KernelConfig(d=2))
        row = t.h_row(4)
        assert np.all(row > -1e-13)
        assert np.all(row <= 1.0)

    @pytest.mark.parametrize(
        "x,y", [(0, 50), (30, 40), (40, 30), (48, 14), (14, 48)]
    )
    def test_cauchy_asymptotics_2d(self, x, y):
        t = table(KernelConfig(d=2, tol=1e-10))
        h = t.H(y, x)
        c = cauchy_asymptotic(x, y, d=2)
        assert abs(h - c) / c < 0.02

    @pytest.mark.parametrize(
        "x1,x2,y", [(0, 30, 40), (24, 32, 30), (48, 0, 14), (0, 0, 50)]
    )
    def test_cauchy_asymptotics_3d(self, x1, x2, y):
        t = table(KernelConfig(d=3, tol=1e-8))
        h = t.H(y, (x1, x2))
        c = cauchy_asymptotic((x1, x2), y, d=3)
        assert abs(h - c) / c < 0.02

    def test_lambda_monotonicity(self):
        vals = []
        for lam in (0.3, 0.6, 0.9, 1.0):
            t = KernelTable(KernelConfig(d=2, lam=lam))
            vals.append(t.H(2, 1))
        assert np.all(np.diff(vals) > 0)

    def test_finite_width_row_is_exact_dft(self):
        cfg = KernelConfig(d=2, vbarrier=VerticalBarrier(8, "cyclic"))
        t = KernelTable(cfg)
        row = t.h_row(2)
        n = 17
        th = 2.0 * np.pi * np.arange(n) / n
        direct = np.array(
            [np.sum(np.cos(x * th) * phi(th) ** 2) / n for x in range(n)]
        )
        assert np.max(np.abs(row - direct)) < 1e-14

    def test_barrier_zeroes_above_level(self):
        cfg = KernelConfig(
            d=2,
            hbarrier=HorizontalBarrier(5, "abs"),
            vbarrier=VerticalBarrier(10, "cyclic"),
        )
        t = KernelTable(cfg)
        assert np.all(t.h_row(6) == 0.0)
        # lower half unaffected by the upper barrier
        plain = KernelTable(KernelConfig(d=2, vbarrier=VerticalBarrier(10, "cyclic")))
        assert np.max(np.abs(t.h_row(-3) - plain.h_row(3))) < 1e-15

    def test_barrier_profile_substitution_identity(self):
        # D-from-modified-H equals the direct f_max * alpha_min Green kernel
        nn, L = 7, 9
        cfg = KernelConfig(
            d=2, hbarrier=HorizontalBarrier(nn, "abs"), vbarrier=VerticalBarrier(L, "cyclic")
        )
        t = KernelTable(cfg)
        n = 2 * L + 1
        th = 2.0 * np.pi * np.arange(n) / n
        ph = phi(th)
        for (y, yp) in [(2, 5), (4, 4), (7, 1)]:
            mx, mn = max(y, yp), min(y, yp)
            f = barrier_profile(mx, th, nn, "abs")
            alpha = sum(ph ** (2 * j + 1 - mn) for j in range(mn))
            direct = np.array([np.sum(np.cos(x * th) * f * alpha) / n for x in range(n)])
            _, row = t.d_row(y, yp)
            assert np.max(np.abs(row - direct)) < 1e-13


class TestD:
    def test_zero_branch(self):
        t = table(KernelConfig(d=2))
        assert t.D(2, -3, 1) == 0.0
        assert t.D(0, 4, 2) == 0.0
        assert t.D(4, 0, 2) == 0.0

    def test_single_term_equals_h(self):
        t = table(KernelConfig(d=2))
        for x in range(-4, 5):
            assert t.D(1, 1, x) == pytest.approx(t.H(1, x), abs=1e-15)
            assert t.D(3, 1, x) == pytest.approx(t.H(3, x), abs=1e-15)

    def test_symmetry(self):
        t = table(KernelConfig(d=2))
        for (y, yp, x) in [(2, 5, 3), (4, 1, -2), (3, 3, 6)]:
            assert t.D(y, yp, x) == pytest.approx(t.D(yp, y, -x), abs=1e-14)

    def test_log_approximation(self):
        t = table(KernelConfig(d=2, tol=3e-9))
        ys = np.arange(2, 101)
        vals = np.array([t.D(int(y), int(y), 0) for y in ys])
        approx = np.log(ys) / (2 * np.pi) + 0.3675
        assert np.max(np.abs(vals - approx)) <= 1e-3

    def test_greens_function_property(self):
        # exact on a self-consistent cyclic grid: L D = delta, D^{y,0} = 0
        cfg = KernelConfig(d=2, vbarrier=VerticalBarrier(64, "cyclic"))
        t = KernelTable(cfg)
        rng = np.random.default_rng(3)
        pairs = [(y, yp) for y in range(1, 21) for yp in range(1, 21)]
        rng.shuffle(pairs)
        dxs = np.arange(-20, 21)
        for (y, yp) in pairs[:60]:
            lhs = (
                4.0 * t.D_at(y, yp, dxs)
                - t.D_at(y, yp, dxs - 1)
                - t.D_at(y, yp, dxs + 1)
                - t.D_at(y + 1, yp, dxs)
                - t.D_at(y - 1, yp, dxs)
            )
            target = np.where((dxs == 0) & (y == yp), 1.0, 0.0)
            assert np.max(np.abs(lhs - target)) < 1e-12
        assert np.all(t.D_at(0, 5, dxs) == 0.0)

    def test_3d_generalization_zero_branch_and_single_term(self):
        cfg = KernelConfig(d=3, vbarrier=VerticalBarrier(6, "cyclic"))
        t = KernelTable(cfg)
        assert t.D(2, -1, (0, 0)) == 0.0
        assert t.D(1, 1, (1, 2)) == pytest.approx(t.H(1, (1, 2)), abs=1e-15)


class TestCauchyAsymptotic:
    def test_closed_forms(self):
        assert cauchy_asymptotic(0, 1, d=2) == pytest.approx(1.0 / np.pi, rel=1e-14)
        assert cauchy_asymptotic((0, 0), 1, d=3) == pytest.approx(
            1.0 / (2 * np.pi), rel=1e-14
        )

    def test_origin_rejected(self):
        with pytest.raises(DomainError):
            cauchy_asymptotic(0, 0, d=2)


class TestTable:
    def test_cache_round_trip(self, tmp_path):
        cfg = KernelConfig(d=2, vbarrier=VerticalBarrier(5, "cyclic"))
        t = KernelTable(cfg)
        r1 = t.h_row(1)
        path = tmp_path / "kernels.npz"
        t.save(path)
        t2 = KernelTable.load(path)
        assert t2.config == cfg
        assert np.array_equal(t2.h_row(1), r1)

    def test_concurrent_row_requests(self):
        t = KernelTable(KernelConfig(d=2, vbarrier=VerticalBarrier(16, "cyclic")))
        errors = []

        def work(y):
            try:
                t.h_row(y % 7)
                t.d_row(1 + y % 5, 2)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=work, args=(k,)) for k in range(16)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert not errors

    def test_quadrature_error_when_grid_capped(self):
        cfg = KernelConfig(d=2, tol=1e-16, max_grid=8192)
        t = KernelTable(cfg)
        with pytest.raises(QuadratureError):
            t.h_row(40)

    def test_module_level_helpers(self):
        cfg = KernelConfig(d=2)
        assert H(0, 1, cfg) == pytest.approx(H10_2D, abs=1e-12)
        assert D(0, 1, 1, cfg) == pytest.approx(H10_2D, abs=1e-12)
