import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sirv_mfc.grid import (
    ConfigurationError,
    GridSpec,
    KernelSpec,
    biharmonic,
    dct_forward,
    dct_inverse,
    divergence,
    estimate_operator_norm,
    gradient,
    kernel_convolve,
    kernel_weights,
    laplacian,
    laplacian_symbol,
    make_ball,
    make_rect,
)


def direct_convolution(kernel, rho, grid):
    """O(n^4) double sum over the mirror-extended field."""
    n1, n2 = grid.space_shape
    w1 = kernel_weights(n1, grid.dx1, kernel.sigma1)
    w2 = kernel_weights(n2, grid.dx2, kernel.sigma2)
    ext = np.pad(rho, ((n1 - 1, n1 - 1), (n2 - 1, n2 - 1)), mode="symmetric")
    out = np.zeros_like(rho)
    for k in range(n1):
        for l in range(n2):
            block = ext[k : k + 2 * n1 - 1, l : l + 2 * n2 - 1]
            out[k, l] = w1 @ block @ w2
    return out


class TestGridSpec:
    def test_spacing(self):
        g = GridSpec(32, 16, 32)
        assert g.dx1 == 1 / 32 and g.dx2 == 1 / 16
        assert g.dt == pytest.approx(1 / 31)
        assert g.n_prime == 16

    @pytest.mark.parametrize("kwargs", [dict(nx1=0, nx2=4, nt=8), dict(nx1=4, nx2=4, nt=2), dict(nx1=4, nx2=4, nt=8, tprime=1.0)])
    def test_rejects_bad_grids(self, kwargs):
        with pytest.raises(ConfigurationError):
            GridSpec(**kwargs)

    def test_tprime_too_close_to_an_end(self):
        with pytest.raises(ConfigurationError):
            GridSpec(4, 4, 4, tprime=0.01)


class TestDifferences:
    def test_constant_has_zero_gradient(self):
        g = GridSpec(10, 12, 3)
        assert np.abs(gradient(np.full(g.space_shape, 3.0), g)).max() == 0.0

    @pytest.mark.parametrize("scheme", ["forward", "centered"])
    def test_linear_field(self, scheme):
        g = GridSpec(16, 16, 3)
        x1, _ = g.centers()
        gu = gradient(x1, g, scheme)
        assert np.allclose(gu[0][1:-1, :], 1.0)
        assert np.abs(gu[1]).max() < 1e-12

    def test_gaussian_second_order(self):
        errs = []
        for n in (32, 64):
            g = GridSpec(n, n, 3)
            x1, x2 = g.centers()
            u = np.exp(-20 * (x1**2 + x2**2))
            gu = gradient(u, g, "centered")
            exact = -40 * x1 * u
            errs.append(np.abs(gu[0] - exact)[1:-1, 1:-1].max())
        assert errs[1] < errs[0] / 3.5

    @pytest.mark.parametrize("scheme", ["forward", "centered"])
    def test_integration_by_parts(self, scheme, rng):
        g = GridSpec(9, 7, 3)
        u = rng.standard_normal(g.space_shape)
        m = rng.standard_normal((2,) + g.space_shape)
        lhs = np.vdot(gradient(u, g, scheme), m)
        rhs = -np.vdot(u, divergence(m, g, scheme))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))

    def test_constant_flux_has_zero_divergence_sum(self, rng):
        g = GridSpec(8, 8, 3)
        m = rng.standard_normal((2,) + g.space_shape)
        assert abs(divergence(m, g).sum()) < 1e-10

    def test_divergence_of_linear_field(self):
        g = GridSpec(16, 16, 3)
        x1, _ = g.centers()
        m = np.stack([x1, np.zeros_like(x1)])
        d = divergence(m, g, "forward")
        assert np.allclose(d[1:-1, :], 1.0)

    def test_nan_guard(self):
        g = GridSpec(4, 4, 3)
        m = np.zeros((2, 4, 4))
        m[0, 1, 1] = np.nan
        with pytest.raises(FloatingPointError):
            divergence(m, g)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            gradient(np.zeros((4, 4)), GridSpec(4, 4, 3), "upwind")


class TestSpectral:
    def test_laplacian_eigenvalue(self):
        g = GridSpec(16, 12, 3)
        x1, x2 = g.centers()
        for p, q in [(0, 0), (3, 0), (2, 5)]:
            u = np.cos(np.pi * p * x1) * np.cos(np.pi * q * x2)
            lam = laplacian_symbol(g)[p, q]
            assert np.allclose(laplacian(u, g), -lam * u, atol=1e-9)
            assert np.allclose(biharmonic(u, g), lam**2 * u, atol=1e-6 * max(1, lam**2))

    def test_laplacian_eigenvalue_formula(self):
        g = GridSpec(16, 16, 3)
        p = 3
        assert laplacian_symbol(g)[p, 0] == pytest.approx(2 / g.dx1**2 * (1 - np.cos(np.pi * p * g.dx1)))

    def test_constant_laplacian_is_zero(self):
        g = GridSpec(6, 6, 3)
        assert np.abs(laplacian(np.ones(g.space_shape), g)).max() < 1e-10

    def test_dct_round_trip_and_parseval(self, rng):
        u = rng.standard_normal((7, 8, 9))
        c = dct_forward(u)
        assert np.abs(dct_inverse(c) - u).max() < 1e-12
        assert np.sum(c**2) == pytest.approx(np.sum(u**2), rel=1e-12)

    def test_single_mode(self):
        g = GridSpec(8, 8, 3)
        x1, x2 = g.centers()
        c = dct_forward(np.cos(np.pi * 2 * x1) * np.cos(np.pi * 3 * x2))
        big = np.abs(c) > 1e-10
        assert big.sum() == 1 and big[2, 3]

    def test_spectral_commutes(self, rng):
        g = GridSpec(10, 10, 3)
        u = rng.standard_normal(g.space_shape)
        assert np.allclose(dct_forward(laplacian(u, g)), -laplacian_symbol(g) * dct_forward(u), atol=1e-10 * 400)


class TestKernel:
    def test_uniform_fixed_point(self):
        g = GridSpec(16, 16, 3)
        out = kernel_convolve(KernelSpec(0.1, 0.1), np.full(g.space_shape, 2.5), g)
        assert np.allclose(out, 2.5, atol=1e-12)

    def test_matches_direct_sum_32(self, rng):
        g = GridSpec(32, 32, 3)
        k = KernelSpec(0.05, 0.08)
        rho = rng.random(g.space_shape)
        assert np.abs(kernel_convolve(k, rho, g) - direct_convolution(k, rho, g)).max() < 1e-8

    def test_impulse_response_peaks_at_source(self):
        g = GridSpec(16, 16, 3)
        rho = np.zeros(g.space_shape)
        rho[8, 5] = 1.0
        out = kernel_convolve(KernelSpec(0.1, 0.1), rho, g)
        assert np.unravel_index(np.argmax(out), out.shape) == (8, 5)
        assert out.min() > -1e-14

    @settings(max_examples=25, deadline=None)
    @given(st.integers(4, 20), st.floats(0.05, 0.4))
    def test_mass_preserved(self, n, sigma):
        g = GridSpec(n, n, 3)
        rho = np.random.default_rng(n).random(g.space_shape)
        out = kernel_convolve(KernelSpec(sigma, sigma), rho, g)
        assert abs(out.sum() - rho.sum()) < 1e-10

    def test_narrow_kernel_warns(self):
        g = GridSpec(8, 8, 3)
        with pytest.warns(UserWarning, match="below half a cell"):
            kernel_convolve(KernelSpec(0.001, 0.0011), np.ones(g.space_shape), g)

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ConfigurationError):
            KernelSpec(0.0, 0.1)


class TestOperatorNorm:
    def test_identity(self):
        assert estimate_operator_norm(lambda x: x, lambda x: x, (5, 5)) == pytest.approx(1.0, abs=1e-8)

    def test_gradient_doubles(self):
        norms = []
        for n in (16, 32):
            g = GridSpec(n, n, 3)
            norms.append(estimate_operator_norm(lambda x: gradient(x, g), lambda y: -divergence(y, g), g.space_shape))
        assert norms[1] / norms[0] == pytest.approx(2.0, rel=0.05)

    def test_laplacian_norm(self):
        g = GridSpec(48, 48, 3)
        est = estimate_operator_norm(lambda x: laplacian(x, g), lambda x: laplacian(x, g), g.space_shape)
        assert est == pytest.approx(4 * (1 / g.dx1**2 + 1 / g.dx2**2), rel=0.01)


class TestMasks:
    def test_ball_area(self):
        g = GridSpec(64, 64, 3)
        count = make_ball(g, (0.3, 0.3), 0.1).sum()
        assert abs(count - np.pi * 0.01 * 64**2) <= 0.1 * np.pi * 0.01 * 64**2

    def test_empty_ball_rejected(self):
        with pytest.raises(ConfigurationError):
            make_ball(GridSpec(8, 8, 3), (0.3, 0.3), 0.0)

    def test_full_rect(self):
        assert make_rect(GridSpec(8, 6, 3), (0, 1, 0, 1)).all()
