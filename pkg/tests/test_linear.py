from __future__ import annotations

import cmath
import json
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dp3.core import (EquationParams, PreconditionError, nu_tilde,
                      sample_manifold_point, sample_with_nu)
from dp3.linear import (LaxFrame, LinearControl, SingularFrame, TruncationError, build_frame,
                        canonical_X, canonical_Y, connection_matrix, roundtrip, sector_infinity,
                        sector_zero, series_infinity, series_zero, transfer)
from dp3.ode import IntegrationControl, SolutionState, integrate, seed_from_asymptotics


@lru_cache(maxsize=None)
def trajectory():
    md = sample_manifold_point(np.random.default_rng(1))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    s = seed_from_asymptotics(100.0, md, p)
    h = 0.01
    pts = integrate([100 - h * k for k in range(1, 5)], s, p,
                    IntegrationControl(tol=1e-13)).waypoints
    return md, p, [s] + list(pts), h


@lru_cache(maxsize=None)
def full_connection():
    _, _, pts, _ = trajectory()
    return connection_matrix(build_frame(pts[0]))


def frame():
    return build_frame(trajectory()[2][0])


def test_frame_basics():
    fr = frame()
    assert fr.motion_residual() < 1e-10
    for mu in (0.3 + 0.1j, 2.0, -1j):
        assert abs(np.trace(fr.U(mu))) < 1e-12
    st0 = trajectory()[2][0]
    assert abs(fr.epsilon * fr.tau * fr.root - st0.u) < 1e-12 * abs(st0.u)
    assert abs(fr.sqrt_B ** 2 - fr.B) < 1e-12 * abs(fr.B)
    with pytest.raises(SingularFrame):
        build_frame(SolutionState(1.0, 0j, 1.0, 0j, trajectory()[1]))


def test_deformation_equations():
    """Coefficients along a trajectory satisfy the isomonodromic flow."""
    _, _, pts, h = trajectory()
    fr = [build_frame(s) for s in pts]      # tau decreasing by h
    w = np.array([1, -8, 0, 8, -1]) / 12    # increasing tau
    seq = fr[::-1]

    def d(f):
        return sum(wk * f(x) for wk, x in zip(w, seq)) / h
    c = seq[2]
    r = c.root
    assert abs(d(lambda x: x.A) - 4 * c.C * r) < 1e-7 * abs(c.C * r)
    assert abs(d(lambda x: x.B) + 4 * c.D * r) < 1e-7 * abs(c.D * r)
    assert abs(d(lambda x: x.tau * x.C) - (2j * c.a * c.C - 2 * c.tau * c.A)) < 1e-6
    assert abs(d(lambda x: x.tau * x.D) - (-2j * c.a * c.D + 2 * c.tau * c.B)) < 1e-6
    assert abs(d(lambda x: x.root) - 2 * (c.A * c.D - c.B * c.C)) < 1e-7


def test_series_infinity_closed_forms():
    fr = frame()
    F = series_infinity(fr, 4)
    A, D, C, r, t = fr.A, fr.D, fr.C, fr.root, fr.tau
    assert np.allclose(F[0], np.eye(2))
    assert abs(F[2][0, 0] - (-0.5j) * (t * r + t * D * C + A * D / r)) < 1e-10
    assert abs(F[2][1, 1] - 0.5j * t * (r + C * D)) < 1e-10


def test_series_infinity_solves_equation():
    fr = frame()
    F = series_infinity(fr, 30)
    mu = 6.0
    Y = canonical_Y(fr, mu, order=30)
    h = 1e-7
    dY = (canonical_Y(fr, mu + h, order=30) - canonical_Y(fr, mu - h, order=30)) / (2 * h)
    assert np.max(np.abs(dY - fr.U(mu) @ Y)) < 1e-6 * np.max(np.abs(fr.U(mu) @ Y))
    assert len(F) == 31


def test_series_zero_structure():
    fr = frame()
    P, H = series_zero(fr, 3)
    assert abs(np.linalg.det(P) - 1) < 1e-12
    assert abs(np.trace(H[1])) < 1e-10
    c1 = 1j * fr.a + 0.5 + fr.kappa
    om = fr.omega
    assert abs(H[1][0, 1] - c1 / (2j * om)) < 1e-10
    z11 = c1 ** 2 / (2j * om) - 2j * fr.tau ** 1.5 * fr.root / cmath.sqrt(fr.eb) - fr.D * om / fr.B
    assert abs(H[1][0, 0] - z11) < 1e-9 * max(1, abs(z11))
    # X0 times exp(i omega sigma3 / mu) approaches Psi0
    mu = 1e-4      # on the oscillatory ray of the zero exponent
    X = canonical_X(fr, mu, order=1) @ np.diag(np.exp(1j * om / mu * np.array([1, -1])))
    assert np.max(np.abs(X - P @ (np.eye(2) + H[1] * mu))) < 1e-12 * np.max(np.abs(P))
    assert np.max(np.abs(X - P)) < 1e-2 * np.max(np.abs(P))


def test_truncation_error_reports_radius():
    fr = frame()
    with pytest.raises(TruncationError) as exc:
        canonical_Y(fr, 0.05, order=None, tol=1e-14)
    assert exc.value.admissible > 0.05


def test_sectors():
    fr = frame()
    lo, hi = sector_infinity(fr, 0)
    assert math.isclose(hi - lo, math.pi)
    lo0, hi0 = sector_zero(fr, 1)
    assert math.isclose(hi0 - lo0, 2 * math.pi)
    with pytest.raises(PreconditionError):
        canonical_Y(fr, 3.0, k=0, arg=hi + 0.1)


def test_transfer_scalar_system():
    t = 3.0
    fr = LaxFrame(t, 0j, 0j, 0j, 0j, 0j, 0.0, 1, 1.0, 1 + 0j, 1 + 0j)
    m0, m1 = 0.5 + 0.2j, 1.4 - 0.3j
    T = transfer(fr, m0, m1)
    e = -1j * t * (m1 ** 2 - m0 ** 2) - 0.5 * cmath.log(m1 / m0)
    assert np.max(np.abs(T - np.diag([cmath.exp(e), cmath.exp(-e)]))) < 1e-10


def test_transfer_group_property():
    fr = frame()
    a, b, c = 0.6, 1.1, 0.9     # real rays: oscillatory, no dichotomy
    Tac = transfer(fr, a, c)
    Tbc, Tab = transfer(fr, b, c), transfer(fr, a, b)
    assert np.max(np.abs(Tac - Tbc @ Tab)) < 1e-8 * np.max(np.abs(Tac))
    assert abs(np.linalg.det(Tac) - 1) < 1e-8
    with pytest.raises(PreconditionError):
        transfer(fr, -1.0, 1.0)


def test_connection_residuals():
    res = full_connection()
    assert res.max_residual() < 1e-8, res.residuals
    assert len(res.stokes_inf) == 5 and len(res.stokes_zero) == 3
    json.dumps(res.to_dict())


def test_sqrt_B_branch_flips_sign():
    fr = frame()
    ctrl = LinearControl()
    G1 = connection_matrix(fr, ctrl, stokes=False).G
    G2 = connection_matrix(fr.with_sqrt_B(-1), ctrl, stokes=False).G
    assert np.max(np.abs(G1 + G2)) < 1e-9 * np.max(np.abs(G1))


@settings(max_examples=4, deadline=None)
@given(st.floats(-3, 3))
def test_phase_gauge_is_right_diagonal(c):
    s = trajectory()[2][0]
    ctrl = LinearControl()
    G0 = connection_matrix(build_frame(s), ctrl, stokes=False).G
    moved = SolutionState(s.tau, s.u, s.du, s.phi + c, s.params, s.gauge_tau)
    G1 = connection_matrix(build_frame(moved), ctrl, stokes=False).G
    expect = G0 @ np.diag([cmath.exp(-0.5j * c), cmath.exp(0.5j * c)])
    d = min(np.max(np.abs(G1 - expect)), np.max(np.abs(G1 + expect)))
    assert d < 1e-8 * np.max(np.abs(G0))


def test_isomonodromic_G_is_constant():
    md = sample_with_nu(np.random.default_rng(0), 0.35)
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    s = seed_from_asymptotics(120.0, md, p)
    end = integrate([90.0], s, p, IntegrationControl(tol=1e-13)).final
    ctrl = LinearControl(tol=1e-10)
    r0 = connection_matrix(build_frame(s), ctrl, stokes=False)
    r1 = connection_matrix(build_frame(end), ctrl, stokes=False)
    A, B = r0.G_isomonodromic, r1.G_isomonodromic
    assert min(np.max(np.abs(A - B)), np.max(np.abs(A + B))) < 1e-7
    assert abs(r0.nu_tilde() - r1.nu_tilde()) < 1e-8
    # the raw G drifts by the right-diagonal factor
    assert np.max(np.abs(r0.G - r1.G)) > 1e-3


def test_roundtrip_generic():
    md = sample_with_nu(np.random.default_rng(1), 0.35)
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    r = roundtrip(md, p, 100.0)
    assert r.passed
    assert r.regime == "generic"
    assert abs(r.nu_input - nu_tilde(md)) == 0
    json.dumps(r.to_dict())


def test_transfer_inverse_and_trivial_prefactor():
    fr = frame()
    a, b = 0.7, 1.3
    T = transfer(fr, a, b) @ transfer(fr, b, a)
    assert np.max(np.abs(T - np.eye(2))) < 1e-10
    bare = LaxFrame(50.0, 0j, 0j, 0j, 0j, 0j, 0.0, 1, 1.0, 1 + 0j, 1 + 0j)
    mu = 2.0 + 0.1j
    expect = np.diag(np.exp(-1j * (50 * mu * mu + (0 - 0.5j) * cmath.log(mu)) * np.array([1, -1])))
    # the bare system has alpha_tilde = 0 but c1 = 1/2, so only F0 survives at order 0
    assert np.max(np.abs(canonical_Y(bare, mu, order=0) - expect)) < 1e-12 * np.max(np.abs(expect))


def test_series_infinity_parity_pattern():
    F = series_infinity(frame(), 2)
    assert F[1][0, 0] == 0 and F[1][1, 1] == 0
    assert F[2][0, 1] == 0 and F[2][1, 0] == 0
