"""Local series of u, H and f at movable poles and zeroes.

Coefficients are produced by formal substitution: the equation is written in
the polynomial form

    tau*u*u'' - tau*u'^2 + u*u' + 8*eps*u^3 - 2*a*b*u - tau*b^2 = 0,

with tau = center + z, and solved order by order. Each new coefficient enters
the lowest not-yet-balanced order linearly, so it is found from two trial
evaluations of that order. The arithmetic is plain Python so the same code
runs on ``complex`` and on ``mpmath.mpc``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import EquationParams

__all__ = [
    "Laurent",
    "LocalSeries",
    "FitFailure",
    "series_at_pole",
    "series_at_zero",
    "H_series_at_pole",
    "f_series_at_pole",
    "H_series_at_zero",
    "f_series_at_zero",
    "ode_residual",
    "fit_local",
    "LocalFit",
]

KINDS = ("pole", "zero_plus", "zero_minus")


class FitFailure(RuntimeError):
    pass


@dataclass
class Laurent:
    """sum_k c[k] * z**(low + k), truncated after len(c) terms."""
    low: int
    c: list

    @property
    def high(self) -> int:
        return self.low + len(self.c) - 1

    def coeff(self, power: int):
        k = power - self.low
        if 0 <= k < len(self.c):
            return self.c[k]
        return 0 * self.c[0]

    def __add__(self, other: "Laurent") -> "Laurent":
        high = min(self.high, other.high)
        low = min(self.low, other.low)
        return Laurent(low, [self.coeff(p) + other.coeff(p) for p in range(low, high + 1)])

    def __neg__(self) -> "Laurent":
        return Laurent(self.low, [-x for x in self.c])

    def __sub__(self, other: "Laurent") -> "Laurent":
        return self + (-other)

    def scale(self, s) -> "Laurent":
        return Laurent(self.low, [s * x for x in self.c])

    def __mul__(self, other: "Laurent") -> "Laurent":
        n = min(len(self.c), len(other.c))
        out = [0 * self.c[0]] * n
        for i in range(n):
            xi = self.c[i]
            for j in range(n - i):
                out[i + j] = out[i + j] + xi * other.c[j]
        return Laurent(self.low + other.low, out)

    def deriv(self) -> "Laurent":
        return Laurent(self.low - 1, [(self.low + k) * x for k, x in enumerate(self.c)])

    def inverse(self) -> "Laurent":
        c0 = self.c[0]
        n = len(self.c)
        out = [1 / c0]
        for k in range(1, n):
            s = 0 * c0
            for j in range(1, k + 1):
                s = s + self.c[j] * out[k - j]
            out.append(-s / c0)
        return Laurent(-self.low, out)

    def __call__(self, z):
        s = 0 * z
        for k in range(len(self.c) - 1, -1, -1):
            s = s * z + self.c[k]
        return s * z ** self.low

    def derivative_at(self, z):
        return self.deriv()(z)


def _tau_series(center, n: int) -> Laurent:
    c = [center, 1 + 0 * center] + [0 * center] * (n - 2)
    return Laurent(0, c[:n])


def _equation(u: Laurent, center, a, b, eps) -> Laurent:
    n = len(u.c)
    a, b = a + 0 * center, b + 0 * center  # promote before forming products
    tau = _tau_series(center, n)
    du = u.deriv()
    ddu = du.deriv()
    one = Laurent(0, [1 + 0 * center] + [0 * center] * (n - 1))
    E = (tau * u * ddu - tau * du * du + u * du + (u * u * u).scale(8 * eps)
         - u.scale(2 * a * b) - tau.scale(b * b) * one)
    return E


def _solve_series(p0, low: int, center, a, b, eps, n_terms: int, free_index: int,
                  free_value, lowest: int) -> list:
    """Coefficients p_k of u = z**low * sum p_k z**k by formal substitution."""
    zero = 0 * p0
    p = [p0]
    for n in range(1, n_terms):
        trial = p + [zero]
        r0 = _equation(Laurent(low, trial + [zero]), center, a, b, eps).coeff(lowest + n)
        trial[-1] = zero + 1
        r1 = _equation(Laurent(low, trial + [zero]), center, a, b, eps).coeff(lowest + n)
        lin = r1 - r0
        if n == free_index:
            p.append(free_value)
            continue
        if abs(lin) < 1e-12 * max(1.0, abs(r1)):
            raise ArithmeticError(f"unexpected resonance at index {n}")
        p.append(-r0 / lin)
    return p


@dataclass
class LocalSeries:
    center: complex
    kind: str
    free_param: complex
    K: int
    u: Laurent
    H: Laurent
    f: Laurent
    params: EquationParams = field(repr=False)

    def coeffs_u(self) -> dict:
        return {self.u.low + k: x for k, x in enumerate(self.u.c)}

    def coeffs_H(self) -> dict:
        return {self.H.low + k: x for k, x in enumerate(self.H.c)}

    def coeffs_f(self) -> dict:
        return {self.f.low + k: x for k, x in enumerate(self.f.c)}

    def H_minus_gauge(self) -> Laurent:
        """Series of H - (a - i/2)^2/(2 tau), the form used at poles and tau_- zeroes."""
        n = len(self.H.c)
        tau_inv = _tau_series(self.center, n + 2).inverse()
        s = (self.params.a - 0.5j) ** 2 / 2
        return self.H - tau_inv.scale(s)

    def eval(self, tau):
        z = tau - self.center
        return self.u(z), self.u.derivative_at(z)

    def eval_all(self, tau):
        z = tau - self.center
        return self.u(z), self.u.derivative_at(z), self.H(z), self.f(z)

    def truncation_estimate(self, r: float) -> float:
        """Relative size of the last retained term of u at radius r."""
        last = abs(self.u.c[-1]) * r ** self.u.high
        first = abs(self.u.c[0]) * r ** self.u.low
        return float(last / first)

    def vault_radius(self, tol: float = 1e-10) -> float:
        """Largest radius at which the last-term test still passes."""
        c = [abs(complex(x)) for x in self.u.c]
        k = len(c) - 1
        if c[-1] == 0:
            return math.inf
        return float((tol * c[0] / c[-1]) ** (1.0 / k))

    def to_dict(self) -> dict:
        def pairs(s: Laurent):
            return {"low": s.low, "coeffs": [[complex(x).real, complex(x).imag] for x in s.c]}
        return {"center": [complex(self.center).real, complex(self.center).imag],
                "kind": self.kind,
                "free_param": [complex(self.free_param).real, complex(self.free_param).imag],
                "K": self.K, "u": pairs(self.u), "H": pairs(self.H), "f": pairs(self.f)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _H_f(u: Laurent, center, params: EquationParams) -> tuple:
    a, b, eps = params.a + 0 * center, params.b + 0 * center, params.epsilon
    n = len(u.c)
    tau = _tau_series(center, n)
    tau_inv = tau.inverse()
    du = u.deriv()
    ui = u.inverse()
    am = a - 0.5j
    one = Laurent(0, [1 + 0 * center] + [0 * center] * (n - 1))
    bsq = one.scale(b * b)
    H = (ui.scale(am * b) + tau_inv.scale(am * am / 2)
         + (tau * (du * du + bsq) * ui * ui).scale(0.25) + u.scale(4 * eps))
    f = (tau * (du - one.scale(1j * b)) * ui).scale(0.25) - one.scale((1j * a + 0.5) / 2)
    return _trim(H), _trim(f)


def _trim(s: Laurent, tol: float = 0.0) -> Laurent:
    # drop exactly cancelled leading terms from the series quotient
    k = 0
    scale = max(abs(x) for x in s.c) or 1
    while k < len(s.c) - 1 and abs(s.c[k]) <= 1e-13 * scale and s.low + k < 0:
        k += 1
    return Laurent(s.low + k, s.c[k:])


def series_at_pole(tau_inf, a0, params: EquationParams, K: int = 12) -> LocalSeries:
    """Laurent series of u at a double pole, kept through (tau - tau_inf)**K."""
    if tau_inf == 0:
        raise ValueError("expansion centre coincides with the fixed singularity tau = 0")
    if K < 2:
        raise ValueError("K must be at least 2")
    a, b, eps = params.a, params.b, params.epsilon
    p0 = -tau_inf / (4 * eps)
    # u = z^-2 (p0 + p1 z + p2 z^2 + ...): p2 = a0 is the resonant slot
    p = _solve_series(p0, -2, tau_inf, a, b, eps, K + 3, 2, a0 + 0 * p0, -6)
    u = Laurent(-2, p)
    H, f = _H_f(u, tau_inf, params)
    return LocalSeries(tau_inf, "pole", a0, K, u, H, f, params)


def series_at_zero(tau_s, s: int, b3, params: EquationParams, K: int = 12) -> LocalSeries:
    """Taylor series of u at a simple zero of type s (+1 or -1)."""
    if tau_s == 0:
        raise ValueError("expansion centre coincides with the fixed singularity tau = 0")
    if s not in (1, -1):
        raise ValueError("s must be +1 or -1")
    a, b, eps = params.a, params.b, params.epsilon
    p0 = 1j * s * b + 0 * tau_s
    p = _solve_series(p0, 1, tau_s, a, b, eps, K, 2, b3 + 0 * p0, 0)
    u = Laurent(1, p)
    H, f = _H_f(u, tau_s, params)
    kind = "zero_plus" if s == 1 else "zero_minus"
    return LocalSeries(tau_s, kind, b3, K, u, H, f, params)


def H_series_at_pole(tau_inf, a0, params, K: int = 12) -> Laurent:
    return series_at_pole(tau_inf, a0, params, K).H_minus_gauge()


def f_series_at_pole(tau_inf, a0, params, K: int = 12) -> Laurent:
    return series_at_pole(tau_inf, a0, params, K).f


def H_series_at_zero(tau_s, s, b3, params, K: int = 12) -> Laurent:
    ser = series_at_zero(tau_s, s, b3, params, K)
    return ser.H if s == 1 else ser.H_minus_gauge()


def f_series_at_zero(tau_s, s, b3, params, K: int = 12) -> Laurent:
    return series_at_zero(tau_s, s, b3, params, K).f


def ode_residual(ser: LocalSeries, tau):
    """u'' minus the right-hand side, for the truncated series at tau."""
    p = ser.params
    a, b = p.a + 0 * tau, p.b + 0 * tau
    z = tau - ser.center
    u = ser.u(z)
    du = ser.u.deriv()(z)
    ddu = ser.u.deriv().deriv()(z)
    rhs = du * du / u - du / tau + (-8 * p.epsilon * u * u + 2 * a * b) / tau + b * b / u
    return ddu - rhs


# --- fitting ------------------------------------------------------------------

@dataclass(frozen=True)
class LocalFit:
    kind: str
    center: complex
    free_param: complex
    residual: float
    ambiguous: bool = False
    residuals: dict = field(default_factory=dict)


def _fit_pole(params: EquationParams, taus, us, dus, K: int = 8):
    # u = -c/(4 eps z^2) + a0 + ..., z = tau - c. Use 1/sqrt(-4 eps u) ~ z/sqrt(c).
    # Locally: u' / u ~ -2/z  =>  z ~ -2u/u'; refine with Newton on the series.
    est = np.asarray(taus) + 2 * np.asarray(us) / np.asarray(dus)
    c = complex(np.median(est.real) + 1j * np.median(est.imag))
    a0 = 0j
    for _ in range(30):
        ser = series_at_pole(c, a0, params, K)
        r = np.array([ser.eval(t)[0] - u for t, u in zip(taus, us)])
        # Jacobian by finite differences in (c, a0)
        h = 1e-7 * max(1.0, abs(c))
        s1 = series_at_pole(c + h, a0, params, K)
        s2 = series_at_pole(c, a0 + 1e-7, params, K)
        J = np.column_stack([
            [(s1.eval(t)[0] - ser.eval(t)[0]) / h for t in taus],
            [(s2.eval(t)[0] - ser.eval(t)[0]) / 1e-7 for t in taus]])
        if np.linalg.cond(J) > 1e8 * max(1.0, np.max(np.abs(us))):
            raise FitFailure("ill-conditioned pole fit")
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        c += step[0]
        a0 += step[1]
        if abs(step[0]) < 1e-14 * max(1, abs(c)) and abs(step[1]) < 1e-12 * max(1, abs(a0)):
            break
    ser = series_at_pole(c, a0, params, 12)
    res = max(abs(ser.eval(t)[0] - u) / max(1.0, abs(u)) for t, u in zip(taus, us))
    return c, a0, res


def _fit_zero(params: EquationParams, s: int, taus, us, dus, K: int = 8):
    b = params.b
    # u ~ i s b z  =>  z ~ u / (i s b)
    est = np.asarray(taus) - np.asarray(us) / (1j * s * b)
    c = complex(np.median(est.real) + 1j * np.median(est.imag))
    b3 = 0j
    for _ in range(30):
        ser = series_at_zero(c, s, b3, params, K)
        r = np.array([ser.eval(t)[0] - u for t, u in zip(taus, us)])
        h = 1e-7 * max(1.0, abs(c))
        s1 = series_at_zero(c + h, s, b3, params, K)
        s2 = series_at_zero(c, s, b3 + 1e-5, params, K)
        J = np.column_stack([
            [(s1.eval(t)[0] - ser.eval(t)[0]) / h for t in taus],
            [(s2.eval(t)[0] - ser.eval(t)[0]) / 1e-5 for t in taus]])
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e12:
            raise FitFailure("ill-conditioned zero fit")
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        c += step[0]
        b3 += step[1]
        if abs(step[0]) < 1e-15 * max(1, abs(c)) and abs(step[1]) < 1e-12 * max(1, abs(b3)):
            break
    ser = series_at_zero(c, s, b3, params, 12)
    scale = max(np.max(np.abs(us)), 1e-300)
    res = max(abs(ser.eval(t)[0] - u) for t, u in zip(taus, us)) / scale
    return c, b3, res


def fit_local(params: EquationParams, samples: Sequence[tuple], K: int = 8) -> LocalFit:
    """Identify a pole or zero from samples (tau, u, u') taken near it."""
    if len(samples) < 4:
        raise FitFailure("need at least four samples")
    taus = [complex(s[0]) for s in samples]
    us = [complex(s[1]) for s in samples]
    dus = [complex(s[2]) for s in samples]
    spread = np.ptp(np.abs(us)) / max(np.max(np.abs(us)), 1e-300)
    if spread < 1e-12 and max(abs(d) for d in dus) < 1e-12:
        raise FitFailure("samples carry no singular structure")
    results = {}
    for kind, fn in (("pole", lambda: _fit_pole(params, taus, us, dus, K)),
                     ("zero_plus", lambda: _fit_zero(params, 1, taus, us, dus, K)),
                     ("zero_minus", lambda: _fit_zero(params, -1, taus, us, dus, K))):
        try:
            results[kind] = fn()
        except (FitFailure, np.linalg.LinAlgError, ZeroDivisionError, ArithmeticError):
            continue
    results = {k: v for k, v in results.items() if np.isfinite(v[2])}
    if not results:
        raise FitFailure("no local model fits the samples")
    order = sorted(results, key=lambda k: results[k][2])
    best = order[0]
    ambiguous = False
    zp, zm = results.get("zero_plus"), results.get("zero_minus")
    if best in ("zero_plus", "zero_minus") and zp and zm and zm[2] > 0:
        ratio = zp[2] / zm[2]
        if 0.5 <= ratio <= 2:
            best, ambiguous = "zero_plus", True
    c, fp, res = results[best]
    if res > 1e-3:
        raise FitFailure(f"best local model ({best}) leaves relative residual {res:.2e}")
    return LocalFit(best, c, fp, res, ambiguous, {k: v[2] for k, v in results.items()})
