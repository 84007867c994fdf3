import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sirv_mfc.config import PRESETS, preset
from sirv_mfc.grid import laplacian_symbol
from sirv_mfc.model import ControlWeights, EpidemicParams
from sirv_mfc.operators import (
    LinearizationPoint,
    Preconditioner,
    _time_operator,
    apply_A,
    apply_adjoint,
    apply_jacobian,
    apply_linearized,
    kkt_residuals,
    pinned_time_basis,
)
from sirv_mfc.state import DualVector, StateVector, S, I, R, V, slab_dot

from conftest import positive_state, small_model


def adjoint_gap(model, ubar, u, p):
    g = model.grid
    lhs = slab_dot(apply_jacobian(model, ubar, u), p.phi, g)
    rhs = u.dot(apply_adjoint(model, ubar, p), g)
    return abs(lhs - rhs) / max(1.0, abs(lhs))


def taylor_slope(model, ubar, h, eps=(1e-2, 1e-3, 1e-4, 1e-5)):
    g = model.grid
    base = apply_A(model, ubar)
    dlin = apply_linearized(model, ubar, ubar + h) - apply_linearized(model, ubar, ubar)
    errs = [np.sqrt(slab_dot(r, r, g)) for r in (apply_A(model, ubar + h * e) - base - e * dlin for e in eps)]
    return np.polyfit(np.log(eps), np.log(errs), 1)[0]


class TestConstraint:
    def test_zero_state(self, model):
        assert np.abs(apply_A(model, StateVector.zeros(model.grid))).max() == 0.0

    def test_uniform_fields_give_ode_defect(self, rng):
        model = small_model(eta=0.0)
        g = model.grid
        ep = model.epidemic
        vals = rng.random((4, g.nt))
        u = StateVector.zeros(g)
        u.rho[:] = vals[:, :, None, None]
        res = apply_A(model, u)
        s, i, r, v = vals[:, :-1]
        dt = np.diff(vals, axis=1) / g.dt
        expected = np.stack(
            [
                dt[0] + ep.beta * s * i + ep.theta1 * s * v,
                dt[1] - ep.beta * s * i + ep.gamma * i,
                dt[2] - ep.gamma * i - ep.theta1 * s * v,
                dt[3] + ep.theta2 * s * v,
            ]
        )
        assert np.abs(res - expected[:, :, None, None]).max() < 1e-12

    def test_grid_mismatch(self, model):
        with pytest.raises(ValueError):
            apply_A(model, StateVector.zeros(small_model(nx=4).grid))

    def test_production_only_before_switch(self, model):
        g = model.grid
        u = StateVector.zeros(g)
        u.f[:] = 1.0
        res = apply_A(model, u)
        assert np.all(res[V, : g.n_prime] == -1.0)
        assert np.all(res[V, g.n_prime :] == 0.0)

    def test_vaccine_momentum_only_after_switch(self, model, rng):
        g = model.grid
        u = StateVector.zeros(g)
        u.m[V] = rng.standard_normal(u.m[V].shape)
        res = apply_A(model, u)
        assert np.all(res[V, : g.n_prime] == 0.0)
        assert np.abs(res[V, g.n_prime :]).max() > 0


class TestLinearization:
    def test_at_zero_is_linear_part(self, rng):
        model = small_model()
        ep = model.epidemic
        linear = model.replace(epidemic=EpidemicParams(0.0, ep.gamma, 0.0, 0.0, *ep.eta, ep.kernel))
        u = StateVector.random(model.grid, rng)
        zero = StateVector.zeros(model.grid)
        assert np.allclose(apply_linearized(model, zero, u), apply_A(linear, u), atol=1e-12)

    def test_consistent_at_base_point(self, model, rng):
        ubar = positive_state(model, rng)
        assert np.abs(apply_linearized(model, ubar, ubar) - apply_A(model, ubar)).max() < 1e-12

    def test_taylor_slope(self, model, rng):
        ubar = positive_state(model, rng)
        h = StateVector.random(model.grid, rng)
        assert taylor_slope(model, ubar, h) == pytest.approx(2.0, abs=0.1)

    def test_point_is_read_only(self, model, rng):
        pt = LinearizationPoint.from_state(positive_state(model, rng))
        with pytest.raises(ValueError):
            pt.rho_S[0, 0, 0] = 1.0


class TestAdjoint:
    @pytest.mark.parametrize("scheme", ["forward", "centered"])
    def test_identity(self, scheme, rng):
        model = small_model(scheme=scheme)
        for _ in range(50):
            ubar = StateVector.random(model.grid, rng)
            u = StateVector.random(model.grid, rng)
            p = DualVector.random(model.grid, rng)
            assert adjoint_gap(model, ubar, u, p) < 1e-10

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 6), st.integers(4, 7), st.integers(0, 2**31))
    def test_identity_any_grid(self, nx, nt, seed):
        rng = np.random.default_rng(seed)
        model = small_model(nx=nx + 2, nt=nt)
        ubar, u = StateVector.random(model.grid, rng), StateVector.random(model.grid, rng)
        p = DualVector.random(model.grid, rng)
        assert adjoint_gap(model, ubar, u, p) < 1e-10

    def test_zero_dual(self, model, rng):
        out = apply_adjoint(model, positive_state(model, rng), DualVector.zeros(model.grid))
        assert not out.rho.any() and not out.m.any() and not out.f.any()

    def test_constant_dual_gives_no_momentum_gradient(self, model):
        zero = StateVector.zeros(model.grid)
        p = DualVector(np.full((4,) + model.grid.slab_shape, 2.0))
        assert np.abs(apply_adjoint(model, zero, p).m).max() == 0.0


class TestPreconditioner:
    def test_round_trip(self, model, rng):
        pre = Preconditioner(model)
        for i in range(4):
            phi = rng.standard_normal(model.grid.slab_shape)
            back = pre.solve(i, pre.apply_surrogate(i, phi))
            assert np.abs(back - phi).max() < 1e-8

    def test_round_trip_cosine_basis(self, model, rng):
        pre = Preconditioner(model, "cosine")
        for i in (S, I, V):
            phi = rng.standard_normal(model.grid.slab_shape)
            assert np.abs(pre.solve(i, pre.apply_surrogate(i, phi)) - phi).max() < 1e-8
        # the lifted constant mode of the R operator has symbol 1e-8, so
        # transform round-off of order 1e-15 comes back multiplied by 1e8
        phi = rng.standard_normal(model.grid.slab_shape)
        back = pre.solve(R, pre.apply_surrogate(R, phi))
        assert np.abs(back - phi).max() < 1e-5
        assert np.abs((back - phi) - (back - phi).mean()).max() < 1e-8

    def test_pinned_basis_diagonalizes_time_operator(self):
        dt = 1 / 9
        lam, Q = pinned_time_basis(9, dt)
        T = _time_operator(9, dt, "pinned")
        assert np.allclose(Q @ np.diag(lam) @ Q.T, T, atol=1e-8)
        assert np.allclose(Q.T @ Q, np.eye(9), atol=1e-12)
        assert lam.min() > 0

    def test_cosine_mode_divided_by_symbol(self, model):
        g = model.grid
        pre = Preconditioner(model, "cosine")
        M = g.nt - 1
        n = (np.arange(M) + 0.5) / M
        x1, x2 = g.centers()
        k, p, q = 2, 1, 3
        mode = np.cos(np.pi * k * n)[:, None, None] * (np.cos(np.pi * p * x1) * np.cos(np.pi * q * x2))[None]
        ep = model.epidemic
        T = 2 / g.dt**2 * (1 - np.cos(np.pi * k / M))
        L = laplacian_symbol(g)[p, q]
        c = ep.beta + ep.theta1
        sym_S = T + ep.eta_S**4 / 4 * L**2 + (1 + c * ep.eta_S**2) * L + c**2
        assert np.allclose(pre.solve(S, mode), mode / sym_S, atol=1e-12)
        sym_V = T + L + ep.theta2**2
        assert np.allclose(pre.solve(V, mode), mode / sym_V, atol=1e-12)

    def test_constant_vaccine_field(self, model):
        pre = Preconditioner(model, "cosine")
        out = pre.solve(V, np.ones(model.grid.slab_shape))
        assert np.allclose(out, 1 / model.epidemic.theta2**2, rtol=1e-12)

    def test_recovered_zero_mode_is_lifted(self, model):
        pre = Preconditioner(model, "cosine")
        assert pre.symbols[R].min() == pytest.approx(1e-8)

    @pytest.mark.parametrize("name", PRESETS)
    def test_symbols_positive_for_presets(self, name):
        model = preset(name).with_resolution(16).build_model()
        for basis in ("pinned", "cosine"):
            assert (Preconditioner(model, basis).symbols > 0).all()

    def test_non_finite_residual(self, model):
        r = np.zeros(model.grid.slab_shape)
        r[0, 0, 0] = np.nan
        with pytest.raises(FloatingPointError):
            Preconditioner(model).solve(S, r)


class TestKKT:
    def test_zero_pair(self):
        model = small_model(weights=ControlWeights(a_R=0.0))
        res = kkt_residuals(model, StateVector.zeros(model.grid), DualVector.zeros(model.grid))
        assert all(v == 0.0 for v in res.values())

    def test_random_pair_is_finite(self, model, rng):
        res = kkt_residuals(model, positive_state(model, rng), DualVector.random(model.grid, rng))
        expected = {"phi_S", "phi_I", "phi_R", "phi_V_production", "phi_V_delivery", "f"}
        expected |= {f"terminal_{p}" for p in "SIRV"} | {f"forward_{p}" for p in "SIRV"}
        assert set(res) == expected
        assert all(np.isfinite(v) for v in res.values())
