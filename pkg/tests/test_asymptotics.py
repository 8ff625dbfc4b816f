from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dp3.asymptotics as A
from dp3.core import (
    THETA0,
    EquationParams,
    MonodromyData,
    PreconditionError,
    invert_symmetry,
    sample_manifold_point,
    sample_singular_real,
)

SQ3 = math.sqrt(3)


def generic_case(seed, b=1.0, eps=1):
    md = sample_manifold_point(np.random.default_rng(seed))
    return md, EquationParams(md.a, b, eps, 0, 0)


def reduction_case(seed, b=1.0):
    md = sample_singular_real(np.random.default_rng(seed))
    return md, EquationParams(md.a, b, 1, 0, 0)


def test_phi_examples():
    assert abs(A.phi_of_tau(1.0, EquationParams(0, 1.0)) - 3 * SQ3) < 1e-14
    p = EquationParams(0, 1.0, 1, 1, 0)
    assert abs(A.phi_of_tau(1j, p, cmath.exp(-0.5j * math.pi)) - 3 * SQ3) < 1e-14
    assert abs(A.phi_of_tau(A.tau_of_phi(40 + 2j, p), p) - (40 + 2j)) < 1e-12


def test_generic_phase_cancellation():
    # nu = 1/2, g11 g12 Gamma(1/2)/sqrt(2 pi) = 1, a = 0 leaves phi - pi/2
    x = A._generic_phase(17.0, 0.5, math.sqrt(2), 0)
    assert abs(x - (17.0 - math.pi / 2)) < 1e-13


@pytest.mark.parametrize("seed", range(5))
def test_vartheta_tilde_relation(seed):
    md, p = generic_case(seed)
    for tau in (50.0, 1234.5):
        ctx = A.phase_vartheta(tau, md, p)
        d = ctx.vartheta - ctx.vartheta_tilde - (THETA0 - math.pi)
        k = round(d.real / (2 * math.pi))
        assert abs(d - 2 * math.pi * k) < 1e-10


def test_delta_G_bound():
    assert abs(A.delta_G_bound(0.25) - 1 / 17) < 1e-15
    assert abs(A.delta_G_bound(1e-12) - 1 / 21) < 1e-10
    assert abs(A.delta_G_bound(1 - 1e-12) - 1 / 33) < 1e-10
    with pytest.raises(PreconditionError):
        A.delta_G_bound(0.5)
    with pytest.raises(PreconditionError):
        A.delta_G_bound(1.2)
    assert abs(A.half_delta_G_bound() - (1 / 15 - 1 / 25)) < 1e-15


def test_error_scale_decays():
    e = [A.error_scale(t, 0.3) for t in (1e4, 1e8, 1e16, 1e40)]
    assert e[-1] < e[0]


def test_precondition_on_half():
    md, p = reduction_case(0)
    with pytest.raises(PreconditionError):
        A.phase_vartheta(100.0, md, p)


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-2, 2))
def test_trig_forms_agree(x, y):
    th = complex(x, y)
    if abs(cmath.sin(th / 2)) < 1e-3:
        return
    p = EquationParams(0, 1.0)
    u1 = A.u_kernel(10.0, th, p)
    u2 = A.u_kernel_product(10.0, th, p)
    assert abs(u1 - u2) <= 1e-12 * max(1, abs(u1))


def test_u_kernel_at_half_pi():
    p = EquationParams(0, -2.0, -1)
    tau = 8.0
    want = -(-1 * 2 ** (2 / 3) / 4) * 2.0
    assert abs(A.u_kernel(tau, math.pi, p) - want) < 1e-13


@pytest.mark.parametrize("b,eps", [(1.0, 1), (2.5, -1)])
def test_h_leading_term(b, eps):
    md, p = generic_case(3, b * eps, eps)
    p = EquationParams(md.a, b * eps, eps, 0, 0)
    for tau in (1e3, 1e5):
        H = A.h_leading(tau, md, p)
        lead = 3 * (eps * b * eps) ** (2 / 3) * tau ** (1 / 3)
        assert abs(H - lead) < 50 * tau ** (-1 / 3)


def test_u_guard():
    with pytest.raises(A.NearSingularity):
        A._guard_generic(2 * math.pi * 3 + 1e-10, A.DEFAULT_DOMAIN)


def test_half_theta_example():
    m = MonodromyData(0, 0, 0, 0, 1, 1, -1, -1)
    r1, const = A._half_scalars(m, 0, 1, 1e-9)
    assert r1 == 0 and abs(const - math.pi / 2) < 1e-14


@pytest.mark.parametrize("seed", range(6))
def test_reduction_uses_same_kernel(seed):
    md, p = reduction_case(seed)
    tau = 777.7
    x = A.phase_Theta0(tau, md, p).Theta0
    assert abs(A.u_leading_half(tau, md, p, reduction=True, guard=False)
               - A.u_kernel(tau, x, p)) < 1e-12 * abs(tau)
    f = A.f_leading_half(tau, md, p, reduction=True, guard=False)
    pref = -(p.eb ** (1 / 3)) * tau ** (2 / 3) / 2
    want = 3 / (math.sqrt(2) * cmath.sin(x / 2) * cmath.sin(x / 2 - THETA0))
    assert abs(f / pref - 1j - want) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_theta_and_Theta0_differ_by_multiple_of_pi(seed):
    md, p = reduction_case(seed)
    d = (A.phase_theta(400.0, md, p).theta - A.phase_Theta0(400.0, md, p).Theta0) / math.pi
    assert abs(d - round(d.real)) < 1e-10


def test_Theta0_continues_generic_phase():
    # the generic phase evaluated at Re(nu+1) = 1/2 equals Theta0 (mod 2 pi)
    md, p = reduction_case(11)
    tau = 321.0
    from dp3.core import nu_tilde
    nu = nu_tilde(md, 0, 0, normalize=True)
    x = A._generic_phase(A.phi_of_tau(tau, p), nu, md.g11 * md.g12, md.a)
    d = (x - A.phase_Theta0(tau, md, p).Theta0) / (2 * math.pi)
    assert abs(d - round(d.real)) < 1e-10


def _imag_case(rng):
    md = sample_manifold_point(rng)
    e1 = int(rng.choice([-1, 1]))
    e2 = int(rng.choice([-1, 0, 1]))
    b = float(rng.uniform(0.3, 3.0))
    eps = int(rng.choice([-1, 1]))
    if (eps * b > 0) != (e2 == 0):
        b = -b
    p = EquationParams(md.a, b, eps, e1, e2)
    tau = cmath.exp(0.5j * math.pi * e1) * rng.uniform(100, 5000)
    return md, p, tau


def test_imag_dual_path_generic():
    rng = np.random.default_rng(2024)
    n = 0
    while n < 100:
        md, p, tau = _imag_case(rng)
        try:
            vals = [(f(tau, md, p), f(tau, md, p, method="rotation"))
                    for f in (A.u_leading_imag, A.h_leading_imag, A.f_leading_imag)]
        except PreconditionError:
            continue
        for d, r in vals:
            assert abs(d - r) <= 1e-10 * max(1, abs(d))
        n += 1


@pytest.mark.parametrize("regime", ["half", "reduction"])
def test_imag_dual_path_half(regime):
    rng = np.random.default_rng(99)
    for _ in range(20):
        image = sample_singular_real(rng)
        e1 = int(rng.choice([-1, 1]))
        md = invert_symmetry(image, e1, 0, imag=True)
        p = EquationParams(md.a, 1.0, 1, e1, 0)
        tau = cmath.exp(0.5j * math.pi * e1) * rng.uniform(100, 5000)
        assert A.phase_beta(tau, md, p, regime).regime == regime
        for f in (A.u_leading_imag, A.h_leading_imag, A.f_leading_imag):
            d = f(tau, md, p, regime)
            r = f(tau, md, p, regime, method="rotation")
            assert abs(d - r) <= 1e-10 * max(1, abs(d))


def test_lattice_closed_form_example():
    tau, terms = A.lattice_closed_form(1, 0, 0, EquationParams(0, 1.0))
    assert abs(tau - (2 * math.pi / (3 * SQ3)) ** 1.5) < 1e-14
    assert abs(tau - 1.3297) < 1e-4 and terms == (0, 0)
    with pytest.raises(ValueError):
        A.lattice_closed_form(0, 0, 0, EquationParams(0, 1.0))


@pytest.mark.parametrize("imag,e1", [(False, 0), (False, 1), (True, 1), (True, -1)])
def test_lattice_growth_and_direction(imag, e1):
    image = sample_singular_real(np.random.default_rng(4))
    md = invert_symmetry(image, e1, 0, imag=imag)
    p = EquationParams(md.a, 1.0, 1, e1, 0)
    pts = A.pole_lattice(md, p, range(1, 400), imag=imag, reduction=True)
    mods = [abs(q.tau_predicted) for q in pts]
    assert all(x < y for x, y in zip(mods, mods[1:]))
    ratio = mods[-1] / mods[-101]
    assert abs(ratio - (399 / 299) ** 1.5) < 0.01
    target = math.pi * e1 / 2 if imag else math.pi * e1
    dev = cmath.phase(pts[-1].tau_predicted * cmath.exp(-1j * target))
    assert abs(dev) < 1e-2


def test_zero_shift_structure():
    md, p = reduction_case(8)
    pts = {(q.m, q.kind): q for q in A.lattice(md, p, [30], reduction=True)}
    pole = pts[(30, "pole")].order_correction_terms[1]
    for kind, s in (("zero_plus", 1), ("zero_minus", -1)):
        t2 = pts[(30, kind)].order_correction_terms[1]
        assert abs(t2 - pole + 3 * s * 2 * THETA0 / (4 * math.pi * 30)) < 1e-14


@pytest.mark.parametrize("reduction", [False, True])
def test_lattice_refinement(reduction):
    md, p = reduction_case(5)
    ms = [10, 40, 160, 640]
    scaled = []
    for q in A.lattice(md, p, ms, refine=True, reduction=reduction):
        want = 2 * math.pi * q.m - A._KIND_SHIFT[q.kind]
        got = A.lattice_phase(q.tau_refined, md, p, reduction=reduction)
        assert abs(got - want) < 1e-9
        gap = abs(q.tau_refined - q.tau_predicted) / q.m ** 1.5
        scaled.append(gap / (math.log(q.m) ** 2 / q.m ** 2))
    # the remainder is O(ln^2 m / m^2) after the m^{3/2} scaling
    assert max(scaled) < 10


def test_half_guard_at_pole():
    md, p = reduction_case(5)
    q = A.pole_lattice(md, p, [50], refine=True, reduction=True)[0]
    with pytest.raises(A.NearSingularity):
        A.u_leading_half(q.tau_refined, md, p, reduction=True)
    mid = q.tau_refined + 0.5 * (A.pole_lattice(md, p, [51], reduction=True)[0].tau_predicted
                                 - q.tau_refined)
    A.u_leading_half(mid, md, p, reduction=True)


@pytest.mark.parametrize("seed", range(5))
def test_inverse_profile(seed):
    md, p = generic_case(seed, b=1.7)
    a2 = p.eb ** (1 / 3) / 2
    for tau in (200.0, 5000.0):
        ip = A.inverse_profile(tau, md, p)
        assert abs(ip.r_hat0 - ip.r_hat0_alt) < 1e-12 * abs(ip.r_hat0)
        u = p.epsilon * tau ** (1 / 3) * p.eb ** (2 / 3) * (1 + ip.u_hat0) / 2
        assert abs(u - A.u_leading(tau, md, p)) < 1e-12 * abs(u)
        assert abs(p.epsilon * tau ** (1 / 3) * ip.sqrt_minus_ab - u) < 1e-11 * abs(u)
        H = 3 * p.eb ** (2 / 3) * tau ** (1 / 3) - 4 * ip.h0 / tau ** (1 / 3) \
            + (md.a - 0.5j) ** 2 / (2 * tau)
        assert abs(H - A.h_leading(tau, md, p) - (md.a - 0.5j) ** 2 / (2 * tau)) < 1e-12 * abs(H)
        k2 = (4 / a2) * (ip.h0 + a2 * (md.a - 0.5j) / (1 + ip.u_hat0))
        assert abs(ip.kappa0_sq - k2) < 1e-12 * abs(k2)
        # integral of motion at leading order
        assert abs(ip.ad + ip.bc + 0.5j * p.eb) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-20, 20), st.floats(-2, 2))
def test_r_hat0_forms(x, y):
    vt = complex(x, y)
    cp, cm = cmath.cos((vt + THETA0) / 2), cmath.cos((vt - THETA0) / 2)
    if min(abs(cp), abs(cm)) < 1e-3:
        return
    r1 = 6 * cmath.cos(THETA0) / (cp * cm)
    r2 = 12 / (1 - 1j * math.sqrt(2) * cmath.cos(vt))
    assert abs(r1 - r2) <= 1e-12 * max(1, abs(r1))


def test_h_minus_inverse_reconstruction_decays():
    md, p = generic_case(4)
    d = []
    for tau in (1e2, 1e4, 1e6):
        ip = A.inverse_profile(tau, md, p)
        H = 3 * p.eb ** (2 / 3) * tau ** (1 / 3) - 4 * ip.h0 / tau ** (1 / 3) \
            + (md.a - 0.5j) ** 2 / (2 * tau)
        d.append(abs(A.h_leading(tau, md, p) - H))
    assert d[0] > d[1] > d[2]


@pytest.mark.parametrize("seed", range(4))
def test_log_deriv_finite_difference(seed):
    md, p = generic_case(seed)
    for tau in (1e3, 1e4, 1e5):
        ld, du = A.log_deriv_leading(tau, md, p)
        h = 1e-4 * tau ** (1 / 3)
        fd = (A.u_leading(tau + h, md, p) - A.u_leading(tau - h, md, p)) / (2 * h)
        fd /= A.u_leading(tau, md, p)
        assert abs(fd - ld) <= 20 * abs(ld) * tau ** (-2 / 3) + 1e-6


def test_log_deriv_kernel_zero_at_half_pi():
    assert abs(A.log_deriv_kernel(10.0, math.pi, EquationParams(0, 1.0))) < 1e-15


@pytest.mark.parametrize("seed", range(4))
def test_reconstructed_derivative_identity(seed):
    md, p = generic_case(seed)
    tau = 2500.0
    _, du = A.log_deriv_leading(tau, md, p)
    u = A.u_leading(tau, md, p)
    r0 = A.inverse_profile(tau, md, p).r_hat0
    c = p.eb ** (1 / 3)
    res = du / u + 2j * c * tau ** (-1 / 3) * (1 - r0 / 2) - 1j * p.b / u
    assert abs(res) < 1e-12


def test_evaluate_regimes():
    md, p = generic_case(1)
    v = A.evaluate(500.0, md, p)
    assert v.regime == "generic" and v.u == A.u_leading(500.0, md, p)
    md, p = reduction_case(1)
    assert A.select_regime(md, p) == "reduction"
