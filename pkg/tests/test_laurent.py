from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest

import golden
from dp3.core import EquationParams
from dp3.laurent import (
    FitFailure,
    Laurent,
    fit_local,
    ode_residual,
    series_at_pole,
    series_at_zero,
)


def draw(rng):
    eps = int(rng.choice([-1, 1]))
    b = float(rng.uniform(0.5, 2.0)) * rng.choice([-1, 1])
    eps2 = 0 if eps * b > 0 else 1
    params = EquationParams(complex(*rng.uniform(-1, 1, 2)), b, eps, 0, eps2)
    center = complex(*rng.uniform(-2, 2, 2))
    center += 1.5 * center / abs(center)
    free = complex(*rng.uniform(-1, 1, 2))
    return params, center, free


def close(x, y, tol=1e-12):
    return abs(x - y) <= tol * max(1.0, abs(y))


def as_dict(series: Laurent):
    return {series.low + k: x for k, x in enumerate(series.c)}


@pytest.mark.parametrize("seed", range(10))
def test_pole_golden(seed):
    params, t, a0 = draw(np.random.default_rng(seed))
    ser = series_at_pole(t, a0, params)
    a, b, e = params.a, params.b, params.epsilon
    cu = ser.coeffs_u()
    assert close(cu[-2], -t / (4 * e)) and abs(cu[-1]) < 1e-14 and cu[0] == a0
    for k, v in golden.pole_u(t, a0, a, b, e).items():
        assert close(cu[k], v), k
    cH = as_dict(ser.H_minus_gauge())
    for k, v in golden.pole_H(t, a0, a, b, e).items():
        assert close(cH[k], v), k
    cf = ser.coeffs_f()
    for k, v in golden.pole_f(t, a0, a, b, e).items():
        assert close(cf[k], v), k


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("s", [1, -1])
def test_zero_golden(seed, s):
    params, t, b3 = draw(np.random.default_rng(100 + seed))
    ser = series_at_zero(t, s, b3, params)
    a, b, e = params.a, params.b, params.epsilon
    cu = ser.coeffs_u()
    for k, v in golden.zero_u(t, s, b3, a, b, e).items():
        assert close(cu[k], v), k
    if s == 1:
        H, Hg, fg = ser.coeffs_H(), golden.zero_plus_H, golden.zero_plus_f
        assert ser.H.low >= 0
        assert abs(ser.coeffs_f().get(0, 0)) < 1e-14
    else:
        H, Hg, fg = as_dict(ser.H_minus_gauge()), golden.zero_minus_H, golden.zero_minus_f
    for k, v in Hg(t, b3, a, b, e).items():
        assert close(H[k], v), k
    cf = ser.coeffs_f()
    for k, v in fg(t, b3, a, b, e).items():
        assert close(cf[k], v), k


def test_pole_examples():
    p = EquationParams(0.2, 1.0)
    ser = series_at_pole(2, 1, p)
    assert close(ser.coeffs_u()[1], -0.5)
    with pytest.raises(ValueError):
        series_at_pole(0, 1, p)
    assert close(series_at_zero(1.0, 1, 0, EquationParams(0, 2.0)).coeffs_u()[1], 2j)


def _slope(ser, center):
    radii = [1e-2, 1e-3, 1e-4]
    res = []
    for r in radii:
        pts = [center + r * mp.expj(th) for th in np.linspace(0, 6, 5)]
        res.append(float(max(abs(ode_residual(ser, z)) for z in pts)))
    return np.polyfit(np.log(radii), np.log(res), 1)[0]


@pytest.mark.parametrize("kind", ["pole", "zero_plus", "zero_minus"])
def test_residual_slope(kind):
    K = 12
    with mp.workdps(80):
        params, t, free = draw(np.random.default_rng(7))
        c = mp.mpc(t.real, t.imag)
        fp = mp.mpc(free.real, free.imag)
        if kind == "pole":
            ser = series_at_pole(c, fp, params, K)
        else:
            ser = series_at_zero(c, 1 if kind == "zero_plus" else -1, fp, params, K)
        assert _slope(ser, c) >= K - 3


@pytest.mark.parametrize("kind", ["pole", "zero_plus", "zero_minus"])
def test_hamiltonian_identity_formal(kind):
    # -tau^2 H' = (2f + ia + 1/2)^2 - (1/2)(ia + 1/2)^2, coefficientwise
    params, t, free = draw(np.random.default_rng(21))
    if kind == "pole":
        ser = series_at_pole(t, free, params)
    else:
        ser = series_at_zero(t, 1 if kind == "zero_plus" else -1, free, params)
    n = len(ser.H.c)
    tau = Laurent(0, [t, 1] + [0] * (n - 2))
    lhs = -(tau * tau * ser.H.deriv())
    c = 1j * params.a + 0.5
    g = ser.f.scale(2) + Laurent(0, [c] + [0] * (len(ser.f.c) - 1))
    rhs = g * g - Laurent(0, [c * c / 2] + [0] * (len(ser.f.c) - 1))
    top = min(lhs.high, rhs.high)
    scale = max(abs(x) for x in rhs.c)
    for p in range(min(lhs.low, rhs.low), top + 1):
        assert abs(lhs.coeff(p) - rhs.coeff(p)) < 1e-10 * scale, p


def test_residues():
    params, t, free = draw(np.random.default_rng(3))
    pole = series_at_pole(t, free, params)
    assert close(pole.H.coeff(-1), 1) and close(pole.f.coeff(-1), -t / 2)
    zm = series_at_zero(t, -1, free, params)
    assert close(zm.H.coeff(-1), 1) and close(zm.f.coeff(-1), t / 2)
    zp = series_at_zero(t, 1, free, params)
    assert abs(zp.H.coeff(-1)) < 1e-12


def _samples(ser, r=0.05, n=8):
    out = []
    for th in np.linspace(0, 2 * np.pi, n, endpoint=False):
        z = ser.center + r * np.exp(1j * th)
        out.append((z,) + ser.eval(z))
    return out


def test_fit_pole_roundtrip():
    params = EquationParams(0.3, 1.0)
    fit = fit_local(params, _samples(series_at_pole(2, 1, params)))
    assert fit.kind == "pole"
    assert abs(fit.center - 2) < 1e-8 and abs(fit.free_param - 1) < 1e-6


@pytest.mark.parametrize("s,kind", [(1, "zero_plus"), (-1, "zero_minus")])
def test_fit_zero_roundtrip(s, kind):
    params = EquationParams(0.3, 1.0)
    fit = fit_local(params, _samples(series_at_zero(2, s, 0.3 + 0.1j, params)))
    assert fit.kind == kind
    assert fit.residuals["pole"] > 1e3 * fit.residual
    assert abs(fit.center - 2) < 1e-8


def test_fit_failure_on_constant():
    with pytest.raises(FitFailure):
        fit_local(EquationParams(0.3, 1.0), [(1 + 0.1 * k, 1, 0) for k in range(5)])


def test_series_json():
    import json
    ser = series_at_pole(2, 1, EquationParams(0.3, 1.0))
    d = json.loads(ser.to_json())
    assert d["kind"] == "pole" and d["u"]["low"] == -2
