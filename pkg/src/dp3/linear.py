"""Direct monodromy: the 2x2 linear problem in the spectral variable mu.

A SolutionState (tau, u, u', phi) fixes the coefficients A, B, C, D of the
mu-equation dPsi/dmu = U(mu) Psi. Canonical solutions are normalised by their
formal expansions at mu = infinity (irregular, rank 2) and at mu = 0
(irregular, rank 1); transporting them to common points yields the connection
matrix G and the Stokes multipliers.

Transport integrates V = Psi exp(i theta(mu) sigma3), where
theta = tau mu^2 + (a - i/2) log mu + omega/mu collects the leading exponents
of both ends, and renormalises each column after every step while keeping
the logarithm of the discarded scale. A solution is therefore carried as a
pair (W, lam) meaning Psi = W diag(exp(lam)).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np

from .core import (EquationParams, MonodromyData, PreconditionError, manifold_residuals,
                   nu_tilde)
from .ode import IntegrationError, SolutionState, _error_norm, _step

__all__ = [
    "LaxFrame",
    "LinearControl",
    "ConnectionResult",
    "SingularFrame",
    "TruncationError",
    "build_frame",
    "series_infinity",
    "series_zero",
    "canonical_Y",
    "canonical_X",
    "transfer",
    "connection_matrix",
    "RoundtripResult",
    "roundtrip",
    "sector_infinity",
    "sector_zero",
]

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)
_SIG = np.array([1.0, -1.0])


class SingularFrame(ValueError):
    """The state has u = 0 or tau = 0, so the Lax coefficients are undefined."""


class TruncationError(ValueError):
    """A formal expansion cannot reach the requested accuracy at this mu."""

    def __init__(self, msg: str, admissible: float):
        super().__init__(msg)
        self.admissible = admissible


@dataclass(frozen=True)
class LinearControl:
    tol: float = 1e-12
    series_tol: float = 1e-14
    max_order: int = 60
    min_exponent: float = 30.0
    max_steps: int = 400_000
    meeting_radius: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class LaxFrame:
    tau: complex
    A: complex
    B: complex
    C: complex
    D: complex
    alpha_tilde: complex
    a: complex
    epsilon: int
    b: float
    root: complex          # sqrt(-AB), chosen so that epsilon*tau*root = u
    sqrt_B: complex
    gauge: complex | None = None

    @property
    def eb(self) -> float:
        return self.epsilon * self.b

    @property
    def omega(self) -> complex:
        return cmath.sqrt(self.tau) * cmath.sqrt(complex(self.eb))

    @property
    def kappa(self) -> complex:
        return 2 * self.tau * self.A * self.D / self.root

    def motion_residual(self) -> float:
        """|tau(AD + BC) + i a sqrt(-AB) + i eps b/2|."""
        t = self.tau * (self.A * self.D + self.B * self.C) + 1j * self.a * self.root
        return abs(t + 0.5j * self.eb)

    def coefficients(self):
        """(U1, U0, Um1, Um2) with U(mu) = U1 mu + U0 + Um1/mu + Um2/mu^2."""
        t = self.tau
        U1 = -2j * t * SIGMA3
        U0 = np.array([[0, 4j * t * self.A / self.root], [-2 * t * self.D, 0]], dtype=complex)
        Um1 = -(1j * self.a + self.kappa + 0.5) * SIGMA3
        Um2 = np.array([[0, self.alpha_tilde], [1j * t * self.B, 0]], dtype=complex)
        return U1, U0, Um1, Um2

    def U(self, mu: complex) -> np.ndarray:
        U1, U0, Um1, Um2 = self.coefficients()
        return U1 * mu + U0 + Um1 / mu + Um2 / (mu * mu)

    def with_sqrt_B(self, sign: int) -> "LaxFrame":
        return LaxFrame(self.tau, self.A, self.B, self.C, self.D, self.alpha_tilde, self.a,
                        self.epsilon, self.b, self.root, sign * self.sqrt_B, self.gauge)

    def to_dict(self) -> dict:
        out = {}
        for k in ("tau", "A", "B", "C", "D", "alpha_tilde", "a", "root", "sqrt_B"):
            v = complex(getattr(self, k))
            out[k] = [v.real, v.imag]
        out.update(epsilon=self.epsilon, b=self.b)
        return out


def build_frame(state: SolutionState, params: EquationParams | None = None,
                sqrt_B_sign: int = 1) -> LaxFrame:
    p = params or state.params
    tau, u, du, phi = state.tau, state.u, state.du, state.phi
    if u == 0 or tau == 0:
        raise SingularFrame(f"Lax frame undefined at tau = {tau}, u = {u}")
    e = p.epsilon
    dphi = 2 * p.a / tau + p.b / u
    E = cmath.exp(1j * phi)
    A = u / tau * E
    B = -u / tau / E
    dA = (du / tau - u / tau ** 2) * E + 1j * dphi * A
    dB = -(du / tau - u / tau ** 2) / E - 1j * dphi * B
    C = e * tau * dA / (4 * u)
    D = -e * tau * dB / (4 * u)
    root = e * u / tau
    alpha = -(2 / B) * (1j * p.a * root + tau * (A * D + B * C))
    return LaxFrame(complex(tau), A, B, C, D, alpha, p.a, e, p.b, root,
                    sqrt_B_sign * cmath.sqrt(B), state.gauge_tau)


# --- formal expansions ----------------------------------------------------------

def series_infinity(frame: LaxFrame, order: int) -> list:
    """Coefficients F_k of Psi ~ (sum F_k mu^-k) exp(-i(tau mu^2 + (a-i/2) ln mu) sigma3)."""
    t = frame.tau
    beta = 4j * t * frame.A / frame.root
    gam = -2 * t * frame.D
    at, bt = frame.alpha_tilde, 1j * t * frame.B
    e = 1j * frame.a + 0.5
    c1 = e + frame.kappa
    d = 4j * t
    p, q, r, s = [1 + 0j], [0j], [0j], [1 + 0j]

    def g(x, j):
        return x[j] if j >= 0 else 0j

    for j in range(1, order + 1):
        q.append((beta * s[j - 1] + (j - 2 - c1 - e) * g(q, j - 2) + at * g(s, j - 3)) / d)
        r.append(-(gam * p[j - 1] + (c1 + e + j - 2) * g(r, j - 2) + bt * g(p, j - 3)) / d)
        p.append((beta / d * ((c1 + e + j - 1) * r[j - 1] + bt * g(p, j - 2))
                  - at * r[j - 1]) / j)
        s.append((-gam / d * ((j - 1 - c1 - e) * q[j - 1] + at * g(s, j - 2))
                  - bt * q[j - 1]) / j)
    return [np.array([[p[j], q[j]], [r[j], s[j]]]) for j in range(order + 1)]


def psi0_matrix(frame: LaxFrame) -> np.ndarray:
    w = complex(frame.eb) ** 0.25 / (frame.tau ** 0.25 * frame.sqrt_B)
    return (1j / math.sqrt(2)) * np.array([[w, w], [1 / w, -1 / w]])


def series_zero(frame: LaxFrame, order: int):
    """(Psi0, [H_k]) with Psi ~ Psi0 (sum H_k mu^k) exp(-i omega sigma3 / mu)."""
    P = psi0_matrix(frame)
    Pi = np.linalg.inv(P)
    U1, U0, Um1, Um2 = frame.coefficients()
    V1, V0, Vm1 = Pi @ U1 @ P, Pi @ U0 @ P, Pi @ Um1 @ P
    om = frame.omega
    H = [I2.copy()]
    zero = np.zeros((2, 2), dtype=complex)

    def h(j):
        return H[j] if j >= 0 else zero

    for k in range(order):
        R = k * H[k] - Vm1 @ H[k] - V0 @ h(k - 1) - V1 @ h(k - 2)
        nxt = np.zeros((2, 2), dtype=complex)
        nxt[0, 1] = R[0, 1] / (2j * om)
        nxt[1, 0] = -R[1, 0] / (2j * om)
        T = Vm1 @ nxt + V0 @ H[k] + V1 @ h(k - 1)
        nxt[0, 0] = T[0, 0] / (k + 1)
        nxt[1, 1] = T[1, 1] / (k + 1)
        H.append(nxt)
    return P, H


def _truncated(coeffs, z, order):
    """Sum coeffs[k] z^k for k <= ``order`` (or up to the smallest term); returns (sum, first omitted term)."""
    terms = [c * z ** k for k, c in enumerate(coeffs)]
    norms = [float(np.max(np.abs(t))) for t in terms]
    if order is None:
        n = min(range(1, len(terms)), key=lambda k: norms[k])   # stop before the smallest
    else:
        n = min(order + 1, len(terms) - 1)                     # keep coefficients 0..order
    S = sum(terms[:n], np.zeros((2, 2), dtype=complex))
    return S, norms[n]


# --- sectors ---------------------------------------------------------------------

def sector_infinity(frame: LaxFrame, k: int):
    """Half-open interval [lo, hi) of arg mu for Omega_k at infinity."""
    c = -0.5 * cmath.phase(frame.tau)
    return c - math.pi / 2 + math.pi * k / 2, c + math.pi / 2 + math.pi * k / 2


def sector_zero(frame: LaxFrame, k: int):
    c = 0.5 * cmath.phase(frame.tau) + 0.5 * cmath.phase(complex(frame.eb))
    return c - math.pi + math.pi * k, c + math.pi + math.pi * k


def _arg_in(mu: complex, lo: float, hi: float, arg: float | None) -> float:
    th = cmath.phase(mu) if arg is None else arg
    if arg is None:
        th += 2 * math.pi * math.floor((lo - th) / (2 * math.pi) + 1)
        if th >= hi:
            th -= 2 * math.pi
    if not lo <= th < hi:
        raise PreconditionError(f"arg mu = {th:.6g} is outside the sector [{lo:.6g}, {hi:.6g})")
    return th


# --- canonical normalisations ------------------------------------------------------

def _theta_inf(frame, mu, logmu):
    return frame.tau * mu * mu + (frame.a - 0.5j) * logmu


def _dressed_Y(frame, mu, k, order, tol, arg, coeffs=None):
    lo, hi = sector_infinity(frame, k)
    th = _arg_in(mu, lo, hi, arg)
    if coeffs is None:
        coeffs = series_infinity(frame, 60 if order is None else order + 1)
    F, est = _truncated(coeffs, 1 / mu, order)
    if tol is not None and est > tol:
        raise TruncationError(
            f"expansion at infinity reaches only {est:.3g} at |mu| = {abs(mu):.4g}",
            _admissible(lambda R: _truncated(coeffs, cmath.exp(-1j * th) / R, order)[1], tol,
                        abs(mu), up=True))
    logmu = math.log(abs(mu)) + 1j * th
    return F, -1j * _theta_inf(frame, mu, logmu) * _SIG, est


def _dressed_X(frame, mu, k, order, tol, coeffs=None):
    lo, hi = sector_zero(frame, k)
    _arg_in(mu, lo, hi, None)
    P, H = coeffs if coeffs is not None else series_zero(frame, 60 if order is None else order + 1)
    S, est = _truncated(H, mu, order)
    if tol is not None and est > tol:
        th = cmath.phase(mu)
        raise TruncationError(
            f"expansion at zero reaches only {est:.3g} at |mu| = {abs(mu):.4g}",
            _admissible(lambda r: _truncated(H, r * cmath.exp(1j * th), order)[1], tol,
                        abs(mu), up=False))
    return P @ S, -1j * frame.omega / mu * _SIG, est


def _admissible(est_of_r, tol, r, up):
    for _ in range(400):
        r = r * 1.05 if up else r / 1.05
        if est_of_r(r) <= tol:
            return r
    return math.inf if up else 0.0


def _materialise(W, lam):
    return W * np.exp(lam)[None, :]


def canonical_Y(frame: LaxFrame, mu: complex, k: int = 0, order: int | None = 2,
                tol: float | None = None, arg: float | None = None) -> np.ndarray:
    """Truncated normalisation of Y_k at infinity; ``order=2`` keeps Psi1, Psi2."""
    W, lam, _ = _dressed_Y(frame, complex(mu), k, order, tol, arg)
    return _materialise(W, lam)


def canonical_X(frame: LaxFrame, mu: complex, k: int = 0, order: int | None = 1,
                tol: float | None = None) -> np.ndarray:
    """Truncated normalisation of X_k at zero; ``order=1`` keeps Z1."""
    W, lam, _ = _dressed_X(frame, complex(mu), k, order, tol)
    return _materialise(W, lam)


# --- transport ---------------------------------------------------------------------

@dataclass
class _Leg:
    """Path mu(s), s in [0, length], parametrised by arc length, with a continuous log."""
    mu: object
    dmu: object
    logmu: object
    length: float


def _segment_leg(m0: complex, m1: complex, log0: complex) -> _Leg:
    d = m1 - m0
    L = abs(d)
    u = d / L if L else 1

    def mu(s):
        return m0 + s * u

    def lg(s):
        return log0 + cmath.log(mu(s) / m0)
    return _Leg(mu, lambda s: u, lg, L)


def _arc_leg(r: float, th0: float, th1: float) -> _Leg:
    L = r * abs(th1 - th0)
    sg = 1.0 if th1 >= th0 else -1.0

    def th(s):
        return th0 + sg * s / r

    def mu(s):
        return r * cmath.exp(1j * th(s))
    return _Leg(mu, lambda s: 1j * sg * cmath.exp(1j * th(s)),
                lambda s: math.log(r) + 1j * th(s), L)


def _theta(frame, mu, logmu):
    return frame.tau * mu * mu + (frame.a - 0.5j) * logmu + frame.omega / mu


def _dtheta(frame, mu):
    return 2 * frame.tau * mu + (frame.a - 0.5j) / mu - frame.omega / (mu * mu)


@dataclass
class _Dressed:
    """Psi = W diag(exp(lam)) at the point mu with log branch logmu."""
    W: np.ndarray
    lam: np.ndarray
    mu: complex
    logmu: complex

    def matrix(self) -> np.ndarray:
        return _materialise(self.W, self.lam)


def _relative(left: _Dressed, right: _Dressed) -> np.ndarray:
    """left^-1 right for two solutions at the same point, exponents applied entrywise."""
    M = np.linalg.solve(left.W, right.W)
    return M * np.exp(right.lam[None, :] - left.lam[:, None])


def _transport(frame: LaxFrame, sol: _Dressed, leg: _Leg, ctrl: LinearControl,
               stats: dict | None = None) -> _Dressed:
    if leg.length == 0:
        return sol
    U1, U0, Um1, Um2 = frame.coefficients()

    def fun(s, y):
        m = leg.mu(s)
        U = U1 * m + U0 + Um1 / m + Um2 / (m * m)
        V = y.reshape(2, 2)
        out = U @ V + 1j * _dtheta(frame, m) * V * _SIG[None, :]
        return leg.dmu(s) * out.reshape(-1)

    th_start = _theta(frame, sol.mu, sol.logmu)
    n0 = np.linalg.norm(sol.W, axis=0)
    logs = np.log(n0).astype(complex)
    y = (sol.W / n0[None, :]).reshape(-1).astype(complex)
    s, L = 0.0, leg.length
    f0 = fun(s, y)
    h = min(L, 1e-3 * L + 1e-3 / (1 + abs(_dtheta(frame, leg.mu(0)))))
    err_prev, n = 1.0, 0
    while s < L:
        n += 1
        if n > ctrl.max_steps:
            raise IntegrationError("linear transport: maximum number of steps exceeded", [])
        h = min(h, L - s)
        y_new, f_new, K = _step(fun, s, y, f0, h)
        err = _error_norm(K, h, y, y_new, ctrl.tol)
        if np.all(np.isfinite(y_new)) and math.isfinite(err) and err <= 1.0:
            s += h
            V = y_new.reshape(2, 2)
            nc = np.linalg.norm(V, axis=0)
            logs += np.log(nc)
            scale = np.tile(1 / nc, 2)
            y, f0 = y_new * scale, f_new * scale
            fac = 0.9 * max(err, 1e-10) ** (-0.7 / 8) * err_prev ** (0.4 / 8)
            h *= min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
        else:
            h *= 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** (-1 / 8))
            if h < 1e-14 * L:
                raise IntegrationError(f"linear transport: step underflow at mu = {leg.mu(s)}", [])
    if stats is not None:
        stats["steps"] = stats.get("steps", 0) + n
    mu_end, log_end = leg.mu(L), leg.logmu(L)
    th_end = _theta(frame, mu_end, log_end)
    lam = sol.lam + logs + 1j * _SIG * (th_start - th_end)
    return _Dressed(y.reshape(2, 2), lam, mu_end, log_end)


def transfer(frame: LaxFrame, mu_from: complex, mu_to: complex,
             ctrl: LinearControl = LinearControl()) -> np.ndarray:
    """T with Psi(mu_to) = T Psi(mu_from) along the straight segment."""
    m0, m1 = complex(mu_from), complex(mu_to)
    if _segment_distance(m0, m1) == 0:
        raise PreconditionError("segment passes through mu = 0")
    log0 = cmath.log(m0)
    start = _Dressed(I2.copy(), np.zeros(2, dtype=complex), m0, log0)
    try:
        end = _transport(frame, start, _segment_leg(m0, m1, log0), ctrl)
    except IntegrationError:
        mid = 0.5 * (m0 + m1)
        return transfer(frame, mid, m1, ctrl) @ transfer(frame, m0, mid, ctrl)
    with np.errstate(over="raise", invalid="raise"):
        try:
            return end.matrix()
        except FloatingPointError as exc:
            raise IntegrationError("transfer matrix overflows despite rescaling", []) from exc


def _segment_distance(m0: complex, m1: complex) -> float:
    d = m1 - m0
    if d == 0:
        return abs(m0)
    s = max(0.0, min(1.0, -(m0 * d.conjugate()).real / abs(d) ** 2))
    return abs(m0 + s * d)


# --- connection problem --------------------------------------------------------------

@dataclass
class ConnectionResult:
    G: np.ndarray
    s00: complex
    s0inf: complex
    s1inf: complex
    stokes_inf: list
    stokes_zero: list
    M_inf: np.ndarray
    M_zero: np.ndarray
    residuals: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def monodromy(self) -> MonodromyData:
        return MonodromyData.from_G(self.diagnostics["a"], self.s00, self.s0inf, self.s1inf,
                                    self.G)

    def nu_tilde(self) -> complex:
        return nu_tilde(self.monodromy)

    @property
    def G_isomonodromic(self) -> np.ndarray:
        """G with the tau^{-(ia/2) sigma3} drift of the infinity normalisation removed.

        The canonical solution at infinity is normalised by exp(-i(a-i/2) log(mu) sigma3)
        at fixed tau, which is not preserved by the tau-flow; the drift is a right
        diagonal factor, so g11 g22, g12 g21 and g11 g12 are unaffected.
        """
        t, a = self.diagnostics["tau"], self.diagnostics["a"]
        d = np.exp(0.5j * a * cmath.log(t) * _SIG)
        return self.G * d[None, :]

    def max_residual(self) -> float:
        return max(self.residuals.values())

    def to_dict(self) -> dict:
        def c(z):
            z = complex(z)
            return [z.real, z.imag]

        def m(M):
            return [[c(x) for x in row] for row in M]
        return {
            "G": m(self.G), "s00": c(self.s00), "s0inf": c(self.s0inf), "s1inf": c(self.s1inf),
            "stokes_inf": [m(S) for S in self.stokes_inf],
            "stokes_zero": [m(S) for S in self.stokes_zero],
            "M_inf": m(self.M_inf), "M_zero": m(self.M_zero),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "diagnostics": {k: (c(v) if isinstance(v, complex)
                                else m(v) if isinstance(v, np.ndarray) else v)
                            for k, v in self.diagnostics.items()},
        }


def _local_rate(frame: LaxFrame, mu: np.ndarray) -> np.ndarray:
    """|eigenvalue of U| growth component along circles through mu (vectorised)."""
    U1, U0, Um1, Um2 = frame.coefficients()
    Us = (U1[None] * mu[:, None, None] + U0[None] + Um1[None] / mu[:, None, None]
          + Um2[None] / (mu ** 2)[:, None, None])
    lam = np.sqrt(Us[:, 0, 0] ** 2 + Us[:, 0, 1] * Us[:, 1, 0])
    return np.abs((lam * 1j * mu).real)


def meeting_radius(frame: LaxFrame) -> float:
    """Radius whose circle carries the least exponential dichotomy."""
    rc = (abs(frame.omega) / abs(frame.tau)) ** (1 / 3)
    radii = np.geomspace(0.2 * rc, 3 * rc, 41)
    th = np.linspace(0, 2 * math.pi, 721)[:-1]
    cost = [float(np.sum(_local_rate(frame, r * np.exp(1j * th))) * (th[1] - th[0]))
            for r in radii]
    return float(radii[int(np.argmin(cost))])


def _outer_radius(frame, coeffs, th, r_s, ctrl):
    r = max(r_s, math.sqrt(ctrl.min_exponent / abs(frame.tau)))
    z = cmath.exp(-1j * th)
    for _ in range(200):
        if _truncated(coeffs, z / r, None)[1] <= ctrl.series_tol:
            return r
        r *= 1.08
    raise TruncationError("expansion at infinity never reaches the tolerance", math.inf)


def _inner_radius(frame, H, th, r_s, ctrl):
    r = min(r_s, abs(frame.omega) / ctrl.min_exponent)
    z = cmath.exp(1j * th)
    for _ in range(200):
        if _truncated(H, z * r, None)[1] <= ctrl.series_tol:
            return r
        r /= 1.08
    raise TruncationError("expansion at zero never reaches the tolerance", 0.0)


def _res(X, Y) -> float:
    return float(np.max(np.abs(X - Y)) / max(1.0, float(np.max(np.abs(Y)))))


def dichotomy_estimate(frame: LaxFrame, r: float) -> float:
    """Largest excursion of the growth exponent around the circle |mu| = r."""
    th = np.linspace(0, 2 * math.pi, 1441)
    mu = r * np.exp(1j * th)
    U1, U0, Um1, Um2 = frame.coefficients()
    Us = (U1[None] * mu[:, None, None] + U0[None] + Um1[None] / mu[:, None, None]
          + Um2[None] / (mu ** 2)[:, None, None])
    lam = np.sqrt(Us[:, 0, 0] ** 2 + Us[:, 0, 1] * Us[:, 1, 0])
    rate = np.abs((lam * 1j * mu).real) * (th[1] - th[0])
    return float(np.sum(rate))


# --- high-precision Taylor transport --------------------------------------------

class _Taylor:
    """Taylor stepping of mu^2 Psi' = P(mu) Psi with P cubic, in mpmath arithmetic."""

    def __init__(self, frame: LaxFrame, dps: int):
        self.dps = dps
        with mp.workdps(dps):
            self.U = [[_mpc(x) for x in M.reshape(-1)] for M in frame.coefficients()]
        self.order = max(24, int(0.9 * dps) + 8)
        self.steps = 0

    def _P(self, c):
        U1, U0, Um1, Um2 = self.U
        c2, c3 = c * c, c * c * c
        P0 = [U1[i] * c3 + U0[i] * c2 + Um1[i] * c + Um2[i] for i in range(4)]
        P1 = [3 * U1[i] * c2 + 2 * U0[i] * c + Um1[i] for i in range(4)]
        P2 = [3 * U1[i] * c + U0[i] for i in range(4)]
        return P0, P1, P2, U1

    def run(self, Psi, points):
        with mp.workdps(self.dps):
            tol = mp.mpf(10) ** (-(self.dps - 6))
            Psi = [_mpc(x) for x in Psi]
            pts = [_mpc(p) for p in points]
            for p0, p1 in zip(pts, pts[1:]):
                Psi = self._segment(Psi, p0, p1, tol)
            return Psi

    def _segment(self, Psi, p0, p1, tol):
        dist = abs(p1 - p0)
        if dist == 0:
            return Psi
        u = (p1 - p0) / dist
        s = mp.mpf(0)
        N = self.order
        while s < dist:
            c = p0 + s * u
            P = self._P(c)
            inv = 1 / (c * c)
            phi = [Psi]
            for n in range(N):
                acc = [mp.mpc(0)] * 4
                for k in range(min(3, n) + 1):
                    acc = _add(acc, _mul(P[k], phi[n - k]))
                if n:
                    acc = [acc[i] - 2 * c * n * phi[n][i] for i in range(4)]
                if n > 1:
                    acc = [acc[i] - (n - 1) * phi[n - 1][i] for i in range(4)]
                phi.append([x * inv / (n + 1) for x in acc])
            scale = max(abs(x) for x in Psi)
            h = min(dist - s, abs(c) / 2)
            for n in (N - 1, N):
                m = max(abs(x) for x in phi[n])
                if m > 0:
                    h = min(h, (tol * scale / m) ** (mp.mpf(1) / n))
            z = h * u
            out = phi[N]
            for n in range(N - 1, -1, -1):
                out = [out[i] * z + phi[n][i] for i in range(4)]
            Psi = out
            s += h
            self.steps += 1
        return Psi


def _mpc(x):
    return mp.mpc(complex(x).real, complex(x).imag) if not isinstance(x, mp.mpc) else x


def _mul(X, Y):
    return [X[0] * Y[0] + X[1] * Y[2], X[0] * Y[1] + X[1] * Y[3],
            X[2] * Y[0] + X[3] * Y[2], X[2] * Y[1] + X[3] * Y[3]]


def _add(X, Y):
    return [X[i] + Y[i] for i in range(4)]


def _solve(X, Y):
    """X^-1 Y for flat 2x2 mp matrices."""
    d = X[0] * X[3] - X[1] * X[2]
    Xi = [X[3] / d, -X[1] / d, -X[2] / d, X[0] / d]
    return _mul(Xi, Y)


def _to_mp(sol: _Dressed):
    return [_mpc(sol.W[i, j]) * mp.exp(_mpc(sol.lam[j])) for i in range(2) for j in range(2)]


def _to_np(X) -> np.ndarray:
    return np.array([complex(x) for x in X]).reshape(2, 2)


def _arc_points(r: float, th0: float, th1: float, max_angle: float = math.pi / 12):
    n = max(1, math.ceil(abs(th1 - th0) / max_angle))
    return [r * cmath.exp(1j * (th0 + (th1 - th0) * k / n)) for k in range(n + 1)]


def _sign_distance(X: np.ndarray, Y: np.ndarray) -> float:
    return min(_res(X, Y), _res(-X, Y))


def connection_matrix(frame: LaxFrame, ctrl: LinearControl = LinearControl(),
                      stokes: bool = True) -> ConnectionResult:
    """Connection matrix, Stokes matrices and their consistency defects.

    G is computed twice: by the phase-dressed double-precision transport and
    by the high-precision Taylor transport; their sign-class distance is
    reported as the ``G_routes`` residual. Stokes matrices come from the
    Taylor transport only, since they are coefficients of subdominant
    solutions and are lost in double precision once the dichotomy on the
    meeting circle exceeds a few e-folds.
    """
    stats: dict = {}
    r_s = ctrl.meeting_radius or meeting_radius(frame)
    am = frame.a - 0.5j
    psi = [sector_infinity(frame, k)[0] + math.pi / 2 for k in range(6)]
    chi = [sector_zero(frame, k)[0] + math.pi for k in range(4)]
    F = series_infinity(frame, ctrl.max_order)
    PH = series_zero(frame, ctrl.max_order)
    excursion = dichotomy_estimate(frame, r_s)
    dps = 20 + math.ceil(excursion / math.log(10))
    tay = _Taylor(frame, dps)

    def start_Y(k):
        th = psi[k]
        R = _outer_radius(frame, F, th, r_s, ctrl)
        mu = R * cmath.exp(1j * th)
        W, lam, _ = _dressed_Y(frame, mu, k, None, None, th, F)
        return _Dressed(W, lam, mu, math.log(R) + 1j * th), R

    def start_X(k):
        th = chi[k]
        r0 = _inner_radius(frame, PH[1], th, r_s, ctrl)
        mu = r0 * cmath.exp(1j * th)
        W, lam, _ = _dressed_X(frame, mu, k, None, None, PH)
        return _Dressed(W, lam, mu, math.log(r0) + 1j * th), r0

    nY, nX = (6, 4) if stokes else (1, 1)
    Ystart = [start_Y(k) for k in range(nY)]
    Xstart = [start_X(k) for k in range(nX)]
    R_used = [R for _, R in Ystart]
    r_used = [r for _, r in Xstart]

    # double-precision route for G
    y0 = _transport(frame, Ystart[0][0], _segment_leg(Ystart[0][0].mu, r_s * cmath.exp(1j * psi[0]),
                                                      Ystart[0][0].logmu), ctrl, stats)
    x0 = _transport(frame, Xstart[0][0], _segment_leg(Xstart[0][0].mu, r_s * cmath.exp(1j * chi[0]),
                                                      Xstart[0][0].logmu), ctrl, stats)
    x0 = _transport(frame, x0, _arc_leg(r_s, chi[0], psi[0]), ctrl, stats)
    G_double = _relative(x0, y0)

    # high-precision route
    Ys = [tay.run(_to_mp(sol), [sol.mu, r_s * cmath.exp(1j * psi[k])])
          for k, (sol, _) in enumerate(Ystart)]
    Xs = [tay.run(_to_mp(sol), [sol.mu, r_s * cmath.exp(1j * chi[k])])
          for k, (sol, _) in enumerate(Xstart)]
    X0 = tay.run(Xs[0], _arc_points(r_s, chi[0], psi[0]))
    with mp.workdps(dps):
        G = _to_np(_solve(X0, Ys[0]))
    res = {
        "det_G": abs(np.linalg.det(G) - 1),
        "G_routes": _sign_distance(G_double, G),
    }
    S_inf, S_zero = [], []
    M_inf = M_zero = np.full((2, 2), np.nan + 0j)
    if stokes:
        with mp.workdps(dps):
            for k in range(5):
                moved = tay.run(Ys[k], _arc_points(r_s, psi[k], psi[k + 1]))
                S_inf.append(_to_np(_solve(moved, Ys[k + 1])))
            for k in range(3):
                moved = tay.run(Xs[k], _arc_points(r_s, chi[k], chi[k + 1]))
                S_zero.append(_to_np(_solve(moved, Xs[k + 1])))
            Ycw = tay.run(Ys[0], _arc_points(r_s, psi[0], psi[0] - 2 * math.pi))
            M_inf = _to_np(_solve(Ys[0], Ycw))
            Xcw = tay.run(Xs[0], _arc_points(r_s, chi[0], chi[0] - 2 * math.pi))
            M_zero = _to_np(_solve(Xs[0], Xcw))
        E1 = np.diag(np.exp(-math.pi * am * _SIG))      # e^{-pi(a-i/2) sigma3}
        E2 = E1 @ E1
        E1i, E2i = np.linalg.inv(E1), np.linalg.inv(E2)
        Gi = np.linalg.inv(G)
        res.update({
            "det_M_inf": abs(np.linalg.det(M_inf) - 1),
            "det_M_zero": abs(np.linalg.det(M_zero) - 1),
            "cyclic": _res(G @ M_inf, M_zero @ G),
            "semi_cyclic": _res(Gi @ S_zero[0] @ SIGMA1 @ G, S_inf[0] @ S_inf[1] @ SIGMA3 @ E1),
            "M_inf_factorisation": _res(M_inf, S_inf[0] @ S_inf[1] @ S_inf[2] @ S_inf[3] @ E2),
            "M_zero_factorisation": _res(M_zero, S_zero[0] @ S_zero[1]),
            "period_four_inf": _res(S_inf[4], E2 @ S_inf[0] @ E2i),
            "period_two_zero": _res(S_zero[2], S_zero[0]),
            "half_period_inf": max(_res(S_inf[k + 2], SIGMA3 @ E1 @ S_inf[k] @ E1i @ SIGMA3)
                                   for k in range(3)),
            "half_period_zero": max(_res(S_zero[k], SIGMA1 @ S_zero[k + 1] @ SIGMA1)
                                    for k in range(2)),
            "structure": _structure_defect(S_inf, S_zero),
        })
        md = MonodromyData.from_G(frame.a, S_zero[0][0, 1], S_inf[0][1, 0], S_inf[1][0, 1], G)
        res["manifold"] = float(max(abs(x) for x in manifold_residuals(md)))
        s00, s0inf, s1inf = S_zero[0][0, 1], S_inf[0][1, 0], S_inf[1][0, 1]
    else:
        s00 = s0inf = s1inf = complex("nan")
    diag = {
        "a": complex(frame.a), "tau": complex(frame.tau), "meeting_radius": r_s,
        "mu_max": max(R_used), "mu_min": min(r_used), "order_limit": ctrl.max_order,
        "dichotomy": excursion, "dps": dps, "taylor_order": tay.order,
        "steps_double": stats.get("steps", 0), "steps_taylor": tay.steps,
        "motion_residual": frame.motion_residual(), "G_double": G_double,
    }
    return ConnectionResult(G, s00, s0inf, s1inf, S_inf, S_zero, M_inf, M_zero,
                            {k: float(v) for k, v in res.items()}, diag)


def _structure_defect(S_inf, S_zero) -> float:
    worst = 0.0
    for k, S in enumerate(S_inf):
        off = S[0, 1] if k % 2 == 0 else S[1, 0]
        worst = max(worst, abs(off), abs(S[0, 0] - 1), abs(S[1, 1] - 1))
    for k, S in enumerate(S_zero):
        off = S[1, 0] if k % 2 == 0 else S[0, 1]
        worst = max(worst, abs(off), abs(S[0, 0] - 1), abs(S[1, 1] - 1))
    return worst


# --- roundtrip -------------------------------------------------------------------

@dataclass(frozen=True)
class RoundtripResult:
    tau_requested: float
    tau_seed: float
    nu_input: complex
    nu_recovered: complex
    error: float
    tolerance: float
    regime: str
    connection: ConnectionResult

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def to_dict(self) -> dict:
        def c(z):
            return [complex(z).real, complex(z).imag]
        return {"tau_requested": self.tau_requested, "tau_seed": self.tau_seed,
                "nu_input": c(self.nu_input), "nu_recovered": c(self.nu_recovered),
                "error": self.error, "tolerance": self.tolerance, "regime": self.regime,
                "passed": self.passed, "G": [[c(x) for x in row] for row in self.connection.G],
                "residuals": self.connection.residuals}


def _nu_distance(x: complex, y: complex) -> float:
    d = complex(x) - complex(y)
    return abs(d - round(d.real))


def roundtrip(md: MonodromyData, params: EquationParams, tau0: float,
              ctrl: LinearControl = LinearControl(), stokes: bool = False,
              factor: float = 5.0, fraction: float = 0.9, inward_to: complex | None = None,
              ode_ctrl=None) -> RoundtripResult:
    """Seed from the asymptotics at tau0, recover G, compare nu_tilde + 1 modulo integers.

    If tau0 falls inside an excluded disc the seed moves to the nearest admissible
    point on the real axis. With ``inward_to`` the seeded solution is first
    integrated there; the tolerance always refers to the seed point. It is
    factor * tau^{-delta_G} ln tau with delta_G at ``fraction`` of its bound (the
    half-regime bound when Re(nu+1) = 1/2).
    """
    from . import asymptotics as asy
    from .ode import IntegrationControl, _safe_tau, integrate, seed_from_asymptotics

    t = _safe_tau(tau0, md, params, "real", None, asy.DEFAULT_DOMAIN) \
        if _near_singular(tau0, md, params) else tau0
    if t is None:
        raise PreconditionError(f"no admissible seed point near tau = {tau0}")
    regime = asy.evaluate(t, md, params).regime
    state = seed_from_asymptotics(t, md, params)
    if inward_to is not None:
        state = integrate([complex(inward_to)], state, params,
                          ode_ctrl or IntegrationControl()).final
    res = connection_matrix(build_frame(state, params), ctrl, stokes=stokes)
    nu_in = nu_tilde(md)
    nu_out = nu_tilde(res.monodromy)
    half = abs(nu_in.real - round(nu_in.real) - 0.5) < 1e-9
    tol = factor * asy.error_scale(t, nu_in - math.floor(nu_in.real), half=half,
                                   fraction=fraction)
    return RoundtripResult(float(tau0), float(t), nu_in, nu_out, _nu_distance(nu_in, nu_out),
                           tol, regime, res)


def _near_singular(tau0, md, params) -> bool:
    from . import asymptotics as asy
    try:
        asy.evaluate(tau0, md, params)
        return False
    except asy.NearSingularity:
        return True
