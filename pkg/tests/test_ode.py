from __future__ import annotations

import math

import numpy as np
import pytest

import dp3.asymptotics as A
from dp3.core import EquationParams, PreconditionError, sample_manifold_point, sample_singular_real
from dp3.laurent import series_at_pole
from dp3.ode import (
    IntegrationControl,
    SingularRHS,
    SolutionState,
    integrate,
    locate_singularities,
    rhs,
    rhs_jacobian,
    seed_from_asymptotics,
)


def state(tau, u, du, phi, p):
    return SolutionState(complex(tau), complex(u), complex(du), complex(phi), p)


def test_rhs_examples():
    p = EquationParams(0, 1.0, 1)
    _, ddu, _ = rhs(state(1, 1, 0, 0, p))
    assert ddu == -7
    assert rhs(state(2, 1, 0, 0, p))[2] == 1
    with pytest.raises(SingularRHS):
        rhs(state(1, 0, 1, 0, p))


def test_jacobian_matches_finite_differences():
    p = EquationParams(0.3 - 0.2j, -1.4, 1, 0, 1)
    s = state(2 + 1j, 0.7 - 0.4j, 0.3 + 0.9j, 0.1, p)
    J = rhs_jacobian(s)
    h = 1e-6
    base = np.array(rhs(s))
    for k in range(3):
        y = s.vector().copy()
        y[k] += h
        y2 = s.vector().copy()
        y2[k] -= h
        col = (np.array(rhs(s.with_values(s.tau, y))) - np.array(rhs(s.with_values(s.tau, y2)))) / (2 * h)
        assert np.max(np.abs(col - J[:, k])) < 1e-8
    assert np.all(np.isfinite(base))


def test_origin_exclusion():
    p = EquationParams(0, 1.0)
    with pytest.raises(PreconditionError):
        integrate([-1.0], state(1, 1, 0, 0, p), p)


def test_vault_reproduces_series():
    p = EquationParams(0.2, 1.0, 1)
    c = 5.0
    ser = series_at_pole(c, 0.3, p, 24)
    r = 0.08
    assert ser.truncation_estimate(r) < 1e-14
    u0, du0 = ser.eval(c - r)
    traj = integrate([c + r], state(c - r, u0, du0, 0, p), p)
    assert len(traj.events) == 1
    ev = traj.events[0]
    assert ev.kind == "pole" and abs(ev.center - c) < 1e-8
    u1, du1 = ser.eval(c + r)
    assert abs(traj.final.u - u1) < 1e-8 * abs(u1)
    assert abs(traj.final.du - du1) < 1e-8 * abs(du1)
    # the state after the vault is self-consistent
    fin = traj.final
    assert abs(fin.b_reconstructed() - p.b) < 1e-12


def _grid_run(md, p, tau0, h, n):
    s = seed_from_asymptotics(tau0, md, p)
    grid = [tau0 - h * k for k in range(1, n + 1)]
    return integrate(grid, s, p, IntegrationControl(tol=1e-13)).waypoints, h


def test_flow_identities():
    md = sample_manifold_point(np.random.default_rng(12))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    pts, h = _grid_run(md, p, 120.0, 0.02, 200)
    c = 1j * p.a + 0.5
    w = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
    for i in range(4, len(pts) - 4, 7):
        win = pts[i - 4:i + 5][::-1]     # increasing tau
        dphi = sum(wk * s.phi for wk, s in zip(w, win)) / h
        dH = sum(wk * s.H for wk, s in zip(w, win)) / h
        s = pts[i]
        assert abs(s.b_reconstructed(dphi) - p.b) < 1e-9
        lhs = s.tau ** 2 * dH + (2 * s.f + c) ** 2 - c * c / 2
        assert abs(lhs) < 1e-6 * max(1, abs(s.tau ** 2 * dH))


def test_path_independence():
    md = sample_manifold_point(np.random.default_rng(5))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    s = seed_from_asymptotics(150.0, md, p)
    a = integrate([120.0], s, p).final
    b = integrate([140 + 3j, 125 - 2j, 120.0], s, p).final
    assert abs(a.u - b.u) < 1e-9 * abs(a.u)
    assert abs(a.du - b.du) < 1e-9 * max(1, abs(a.du))


def test_seed_invariants():
    md = sample_manifold_point(np.random.default_rng(2))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    s = seed_from_asymptotics(300.0, md, p)
    v = A.evaluate(300.0, md, p)
    assert s.phi == 0 and s.gauge_tau == 300.0
    assert s.u == v.u and s.du == v.du
    am = p.a - 0.5j
    H = am * p.b / s.u + am ** 2 / 600 + 300 * (s.du ** 2 + p.b ** 2) / (4 * s.u ** 2) + 4 * s.u
    assert abs(s.H - H) < 1e-12 * abs(H)
    assert abs(s.f - (300.0 * (s.du - 1j * p.b) / (4 * s.u) - (1j * p.a + 0.5) / 2)) < 1e-12
    with pytest.raises(PreconditionError):
        seed_from_asymptotics(2.0, md, p)


def test_two_seeds_meet():
    md = sample_manifold_point(np.random.default_rng(7))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    t0 = 200.0
    lo = seed_from_asymptotics(t0, md, p)
    hi = integrate([t0], seed_from_asymptotics(1.2 * t0, md, p), p).final
    es = A.evaluate(t0, md, p).error_scale
    assert abs(hi.u - lo.u) / abs(lo.u) < 10 * es


def test_singular_real_seed_is_real():
    md = sample_singular_real(np.random.default_rng(3))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    s = seed_from_asymptotics(300.0, md, p)
    assert abs(s.u.imag) < 1e-12 * abs(s.u)
    traj = integrate([250.0], s, p)
    assert len(traj.events) > 0
    assert max(abs(x.u.imag) / abs(x.u) for x in traj.samples) < 1e-9


def test_cheese_hole_refusal():
    md = sample_singular_real(np.random.default_rng(3))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    q = A.pole_lattice(md, p, [40], refine=True, reduction=True)[0]
    with pytest.raises(A.NearSingularity, match="nearest safe tau"):
        seed_from_asymptotics(q.tau_refined.real, md, p)


def test_locate_small_window():
    md = sample_singular_real(np.random.default_rng(3))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    res = locate_singularities(md, p, [10, 11])
    assert res.all_occupied_once
    kinds = [h.detected_kind for h in res.holes]
    assert kinds == ["zero_minus", "pole", "zero_plus"] * 2
    assert math.isclose(res.holes[1].winding, -2, abs_tol=1e-3)


def test_trajectory_csv():
    md = sample_manifold_point(np.random.default_rng(2))
    p = EquationParams(md.a, 1.0, 1, 0, 0)
    traj = integrate([295.0], seed_from_asymptotics(300.0, md, p), p)
    text = traj.to_csv("config sha256=abc")
    lines = text.splitlines()
    assert lines[0].startswith("#") and lines[1].startswith("tau_re")
    assert len(lines) == len(traj.samples) + 2
