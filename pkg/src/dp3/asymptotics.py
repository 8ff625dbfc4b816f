"""Leading large-tau asymptotics of u, H and f parametrised by monodromy data.

Every evaluator reduces to one trigonometric kernel in a phase variable x:

    u ~ (eps (eps b)^{2/3} / 2) tau^{1/3} (1 - 3 / (2 sin^2(x/2)))
    H ~ 3 (eps b)^{2/3} tau^{1/3} - 4 i s sqrt(3) (eps b)^{1/3} tau^{-1/3} (...)
    f ~ -(s (eps b)^{1/3} / 2) tau^{2/3} (i + 3 / (sqrt(2) sin(x/2) sin(x/2 - theta0)))

with s = (-1)^eps2. The regimes differ only in how x is built from the data:
the generic phase (Re(nu+1) in (0,1) minus 1/2), the half-regime phase, and
the singular-reduction phase. Imaginary-axis rays reuse the same kernel after
rotating tau and mapping the data.

The O(tau^{-delta_G} ln tau) remainder is never modelled; it is reported as
``error_scale`` with delta_G at 90% of its admissible supremum.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._roots import cbrt, cbrt2, log_gamma
from .core import (
    LN_2_PLUS_SQRT3,
    THETA0,
    EquationParams,
    MonodromyData,
    PreconditionError,
    apply_imag_symmetry,
    apply_symmetry,
    invert_symmetry,
    nu_tilde,
)

__all__ = [
    "DomainConfig",
    "NearSingularity",
    "PhaseContext",
    "InverseProfile",
    "LatticePoint",
    "AsymptoticValue",
    "phi_of_tau",
    "tau_of_phi",
    "delta_G_bound",
    "error_scale",
    "phase_vartheta",
    "phase_vartheta_tilde",
    "phase_theta",
    "phase_Theta0",
    "phase_beta",
    "select_regime",
    "u_kernel",
    "u_kernel_product",
    "u_leading",
    "h_leading",
    "f_leading",
    "u_leading_half",
    "h_leading_half",
    "f_leading_half",
    "u_leading_imag",
    "h_leading_imag",
    "f_leading_imag",
    "pole_lattice",
    "zero_lattice",
    "lattice",
    "inverse_profile",
    "log_deriv_leading",
    "log_deriv_kernel",
    "lattice_closed_form",
    "lattice_phase",
    "evaluate",
    "in_strip",
]

SQRT3 = math.sqrt(3.0)
SQRT2 = math.sqrt(2.0)
HALF_LN_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class DomainConfig:
    """Free constants of the strip and of the cheese-holes around singularities."""
    c1: float = 1.0
    c2: float = 10.0
    C: float = 1.0
    delta: float = 1.0 / 40
    guard: float = 1e-8
    half_tol: float = 1e-9


DEFAULT_DOMAIN = DomainConfig()


class NearSingularity(ValueError):
    """Evaluation point too close to a predicted pole or zero."""

    def __init__(self, message: str, distance: float, nearest: complex | None = None):
        super().__init__(message)
        self.distance = distance
        self.nearest = nearest


@dataclass(frozen=True)
class PhaseContext:
    """Phase at one tau; exactly one of the named phases is set per regime."""
    tau: complex
    phi: complex
    nu_tilde_plus_1: complex
    regime: str
    error_scale: float
    vartheta: complex | None = None
    theta: complex | None = None
    Theta0: complex | None = None
    beta: complex | None = None
    beta_hat: complex | None = None
    beta0_hat: complex | None = None
    vartheta_tilde: complex | None = None

    @property
    def phase(self) -> complex:
        for v in (self.vartheta, self.theta, self.Theta0, self.beta, self.beta_hat,
                  self.beta0_hat):
            if v is not None:
                return v
        raise AttributeError("no phase set")


@dataclass(frozen=True)
class AsymptoticValue:
    tau: complex
    u: complex
    du: complex
    H: complex
    f: complex
    error_scale: float
    regime: str
    phase: complex


@dataclass(frozen=True)
class LatticePoint:
    m: int
    kind: str
    tau_predicted: complex
    order_correction_terms: tuple
    tau_refined: complex | None = None


@dataclass(frozen=True)
class InverseProfile:
    r_hat0: complex
    r_hat0_alt: complex
    u_hat0: complex
    h0: complex
    kappa0_sq: complex
    sqrt_b_tau: complex
    Phi: complex
    kappa: complex
    sqrt_minus_ab: complex
    ad: complex
    bc: complex
    cd: complex


# --- basic maps -----------------------------------------------------------------

def _sign2(params: EquationParams) -> int:
    return (-1) ** abs(params.eps2)


def phi_of_tau(tau, params: EquationParams, rotate: complex = 1.0):
    """3 sqrt(3) (-1)^eps2 (eps b)^{1/3} (rotate*tau)^{2/3}."""
    return 3 * SQRT3 * _sign2(params) * cbrt(params.eb) * cbrt2(rotate * np.asarray(tau))


def tau_of_phi(phi, params: EquationParams, ray: complex = 1.0):
    """Inverse of ``phi_of_tau`` on the ray tau = ray * |tau|."""
    w = np.asarray(phi, dtype=complex) / (3 * SQRT3 * _sign2(params) * cbrt(params.eb))
    # w = t^{2/3} with t = tau/ray near the positive axis
    return ray * w ** 1.5


def delta_G_bound(nu_tilde_plus_1: complex) -> float:
    r = complex(nu_tilde_plus_1).real
    if not 0 < r < 1:
        raise PreconditionError(f"Re(nu+1) = {r} lies outside (0, 1)")
    if abs(r - 0.5) < 1e-12:
        raise PreconditionError("Re(nu+1) = 1/2: use the half-regime bound 1/15 - 8*delta/5")
    if r < 0.5:
        return (1 + 2 * r) / (3 * (7 + 6 * r))
    return (3 - 2 * r) / (3 * (9 + 2 * r))


def half_delta_G_bound(delta: float = DEFAULT_DOMAIN.delta) -> float:
    return 1.0 / 15 - 8 * delta / 5


def error_scale(tau, nu_tilde_plus_1: complex | None = None, half: bool = False,
                fraction: float = 0.9, delta: float = DEFAULT_DOMAIN.delta) -> float:
    """|tau|^{-delta_G} ln|tau| with delta_G at ``fraction`` of its supremum."""
    bound = half_delta_G_bound(delta) if half else delta_G_bound(nu_tilde_plus_1)
    t = abs(tau)
    return float(t ** (-fraction * bound) * math.log(t))


def in_strip(tau, params: EquationParams, domain: DomainConfig = DEFAULT_DOMAIN,
             rotate: complex = 1.0) -> bool:
    p = complex(phi_of_tau(tau, params, rotate))
    return p.real > domain.c1 and abs(p.imag) < domain.c2


# --- phases -----------------------------------------------------------------------

def _generic_phase(phi, nu, g11g12, a_eff):
    nmh = nu - 0.5
    return (phi - 1j * nmh * (np.log(phi) + math.log(12)) + a_eff * LN_2_PLUS_SQRT3
            + math.pi / 4 - 1.5 * math.pi * nu
            + 1j * (cmath.log(g11g12) + log_gamma(nu) - HALF_LN_2PI))


def _check_generic(nu: complex):
    if not 0 < nu.real < 1 or abs(nu.real - 0.5) < 1e-12:
        raise PreconditionError(
            f"Re(nu+1) = {nu.real:.6g} is not in (0,1) minus {{1/2}}")


def _mapped(md, params: EquationParams):
    return apply_symmetry(md, params.eps1, params.eps2)


def phase_vartheta(tau, md: MonodromyData, params: EquationParams) -> PhaseContext:
    m = _mapped(md, params)
    if m.g11 * m.g12 * m.g21 * m.g22 == 0:
        raise PreconditionError("a mapped connection-matrix entry vanishes")
    nu = nu_tilde(md, params.eps1, params.eps2, normalize=True)
    _check_generic(nu)
    ph = complex(phi_of_tau(tau, params))
    x = _generic_phase(ph, nu, m.g11 * m.g12, _sign2(params) * md.a)
    vt = None
    if params.eps1 == 0 and params.eps2 == 0:
        vt = phase_vartheta_tilde(tau, md, params)
    return PhaseContext(complex(tau), ph, nu, "generic", error_scale(tau, nu),
                        vartheta=complex(x), vartheta_tilde=vt)


def phase_vartheta_tilde(tau, md: MonodromyData, params: EquationParams) -> complex:
    """The tilde phase of the inverse problem (eps1 = eps2 = 0 only)."""
    if params.eps1 != 0 or params.eps2 != 0:
        raise PreconditionError("the tilde phase is defined for eps1 = eps2 = 0")
    nu = nu_tilde(md, 0, 0, normalize=True)
    ph = complex(phi_of_tau(tau, params))
    nmh = nu - 0.5
    return complex(ph - 1j * nmh * (cmath.log(ph) + math.log(12))
                   + (md.a - 0.5j) * LN_2_PLUS_SQRT3
                   + 1j * (cmath.log(md.g11 * md.g12) + log_gamma(nu) - HALF_LN_2PI)
                   - 1.5 * math.pi * nu + 1.75 * math.pi)


def _half_scalars(m: MonodromyData, a, sgn: int, tol: float):
    p = -m.g11 * m.g22
    nu = 1j / (2 * math.pi) * cmath.log(m.g11 * m.g22)
    nu -= math.floor(nu.real)
    if abs(nu.real - 0.5) > tol:
        raise PreconditionError(f"Re(nu+1) = {nu.real:.12g} is not 1/2")
    r1 = math.log(abs(p)) / (2 * math.pi)
    R = m.g11 * m.g12 / (m.g21 * m.g22)
    const = (r1 * math.log(12) + sgn * a.real * LN_2_PLUS_SQRT3 + math.pi / 2
             - 0.5 * cmath.phase(R) - log_gamma(0.5 + 1j * r1).imag
             + 1j * (sgn * a.imag * LN_2_PLUS_SQRT3 + 0.5 * math.log(abs(R))))
    return r1, const


def _reduction_scalars(m: MonodromyData, a, sgn: int):
    r0 = math.log(abs(m.g11)) / math.pi
    const = (r0 * math.log(12) + sgn * a.real * LN_2_PLUS_SQRT3 - math.pi / 2
             - cmath.phase(m.g11 * m.g12) - log_gamma(0.5 + 1j * r0).imag)
    return r0, const


def phase_theta(tau, md: MonodromyData, params: EquationParams,
                tol: float = DEFAULT_DOMAIN.half_tol) -> PhaseContext:
    """Half-regime phase built from rho1 and the ratio g11 g12 / (g21 g22)."""
    m = _mapped(md, params)
    r1, const = _half_scalars(m, md.a, _sign2(params), tol)
    ph = complex(phi_of_tau(tau, params))
    x = ph + r1 * cmath.log(ph) + const
    return PhaseContext(complex(tau), ph, 0.5 + 1j * r1, "half", error_scale(tau, half=True),
                        theta=complex(x))


def phase_Theta0(tau, md: MonodromyData, params: EquationParams) -> PhaseContext:
    """Phase for data obeying the singular real reduction."""
    m = _mapped(md, params)
    r0, const = _reduction_scalars(m, md.a, _sign2(params))
    ph = complex(phi_of_tau(tau, params))
    x = ph + r0 * cmath.log(ph) + const
    return PhaseContext(complex(tau), ph, 0.5 + 1j * r0, "reduction",
                        error_scale(tau, half=True), Theta0=complex(x))


# --- kernels -------------------------------------------------------------------

def u_kernel(tau, x, params: EquationParams):
    amp = params.epsilon * cbrt2(params.eb) / 2 * cbrt(tau)
    s = np.sin(x / 2)
    return amp * (1 - 1.5 / (s * s))


def u_kernel_product(tau, x, params: EquationParams):
    amp = params.epsilon * cbrt2(params.eb) / 2 * cbrt(tau)
    s = np.sin(x / 2)
    return amp * np.sin(x / 2 - THETA0) * np.sin(x / 2 + THETA0) / (s * s)


def _h_kernel(tau, x, nmh, a_eff, params: EquationParams):
    s2 = _sign2(params)
    c = cbrt(params.eb)
    br = (nmh + (1j * a_eff + 0.5) / (2 * SQRT3)
          + 0.25j / np.tan(x / 2) + 0.25j / np.tan(x / 2 - THETA0))
    return 3 * cbrt2(params.eb) * cbrt(tau) - 4j * s2 * SQRT3 * c / cbrt(tau) * br


def _f_kernel(tau, x, params: EquationParams):
    s2 = _sign2(params)
    return -(s2 * cbrt(params.eb) / 2) * cbrt2(tau) * (
        1j + 3 / (SQRT2 * np.sin(x / 2) * np.sin(x / 2 - THETA0)))


def _guard_generic(x, domain: DomainConfig):
    d = abs(cmath.sin(x / 2))
    if d < domain.guard:
        raise NearSingularity(f"|sin(phase/2)| = {d:.3e} is inside the guard band", d)


def _guard_half(ctx: PhaseContext, domain: DomainConfig):
    # centres in phase space: x = 2 pi m (pole), x/2 +- theta0 = pi m (zeros)
    tau = ctx.tau
    radius = domain.C * abs(tau) ** (-domain.delta)
    best = math.inf
    for shift in (0.0, 2 * THETA0, -2 * THETA0):
        y = ctx.phase + shift
        k = round((y.real) / (2 * math.pi))
        d = abs(y - 2 * math.pi * k)
        best = min(best, d)
    if best < radius:
        raise NearSingularity(
            f"tau = {tau} lies in a cheese-hole (phase distance {best:.3e} < {radius:.3e})",
            best)


def _u_both(tau, x, params):
    u1 = complex(u_kernel(tau, x, params))
    u2 = complex(u_kernel_product(tau, x, params))
    if abs(u1 - u2) > 1e-9 * max(1.0, abs(u1)):
        raise ArithmeticError(f"closed forms of u disagree: {u1} vs {u2}")
    return u2


# --- real-axis evaluators ----------------------------------------------------------

def u_leading(tau, md, params, domain: DomainConfig = DEFAULT_DOMAIN) -> complex:
    ctx = phase_vartheta(tau, md, params)
    _guard_generic(ctx.phase, domain)
    return _u_both(tau, ctx.phase, params)


def h_leading(tau, md, params, domain: DomainConfig = DEFAULT_DOMAIN) -> complex:
    ctx = phase_vartheta(tau, md, params)
    _guard_generic(ctx.phase, domain)
    return complex(_h_kernel(tau, ctx.phase, ctx.nu_tilde_plus_1 - 0.5,
                             _sign2(params) * md.a, params))


def f_leading(tau, md, params, domain: DomainConfig = DEFAULT_DOMAIN) -> complex:
    ctx = phase_vartheta(tau, md, params)
    _guard_generic(ctx.phase, domain)
    return complex(_f_kernel(tau, ctx.phase, params))


def _half_ctx(tau, md, params, reduction: bool):
    return phase_Theta0(tau, md, params) if reduction else phase_theta(tau, md, params)


def u_leading_half(tau, md, params, reduction: bool = False,
                   domain: DomainConfig = DEFAULT_DOMAIN, guard: bool = True) -> complex:
    ctx = _half_ctx(tau, md, params, reduction)
    if guard:
        _guard_half(ctx, domain)
    return _u_both(tau, ctx.phase, params)


def h_leading_half(tau, md, params, reduction: bool = False,
                   domain: DomainConfig = DEFAULT_DOMAIN, guard: bool = True) -> complex:
    ctx = _half_ctx(tau, md, params, reduction)
    if guard:
        _guard_half(ctx, domain)
    return complex(_h_kernel(tau, ctx.phase, ctx.nu_tilde_plus_1 - 0.5,
                             _sign2(params) * md.a, params))


def f_leading_half(tau, md, params, reduction: bool = False,
                   domain: DomainConfig = DEFAULT_DOMAIN, guard: bool = True) -> complex:
    ctx = _half_ctx(tau, md, params, reduction)
    if guard:
        _guard_half(ctx, domain)
    return complex(_f_kernel(tau, ctx.phase, params))


# --- imaginary-axis evaluators ------------------------------------------------------

def _imag_phase_direct(tau, md, params, regime: str):
    """Phase beta (generic), beta-hat (half) or beta-hat-0 (reduction), as printed."""
    e1, e2 = params.eps1, params.eps2
    if e1 not in (-1, 1):
        raise PreconditionError("imaginary-axis evaluators need eps1 = +1 or -1")
    rot = cmath.exp(-0.5j * math.pi * e1)
    mh = apply_imag_symmetry(md, e1, e2)
    sgn = (-1) ** (1 + abs(e2))
    ph = complex(phi_of_tau(tau, params, rot))
    if regime == "generic":
        nu = nu_tilde(md, e1, e2, normalize=True, imag=True)
        _check_generic(nu)
        x = _generic_phase(ph, nu, mh.g11 * mh.g12, sgn * md.a)
        return complex(x), nu - 0.5, rot, ph
    if regime == "half":
        r, const = _half_scalars(mh, md.a, sgn, DEFAULT_DOMAIN.half_tol)
    else:
        r, const = _reduction_scalars(mh, md.a, sgn)
    return ph + r * cmath.log(ph) + const, 1j * r, rot, ph


def phase_beta(tau, md: MonodromyData, params: EquationParams,
               regime: str = "generic") -> PhaseContext:
    """Imaginary-axis phase: beta, beta-hat (half) or beta-hat-0 (reduction)."""
    x, nmh, rot, ph = _imag_phase_direct(tau, md, params, regime)
    nu = 0.5 + nmh
    if regime == "generic":
        return PhaseContext(complex(tau), ph, nu, regime, error_scale(rot * tau, nu),
                            beta=complex(x))
    es = error_scale(rot * tau, half=True)
    key = "beta_hat" if regime == "half" else "beta0_hat"
    return PhaseContext(complex(tau), ph, nu, regime, es, **{key: complex(x)})


def _imag_direct(tau, md, params, regime, what):
    x, nmh, rot, _ = _imag_phase_direct(tau, md, params, regime)
    t = rot * tau
    sgn = (-1) ** (1 + abs(params.eps2))
    if what == "u":
        return rot * _u_both(t, x, params)
    if what == "H":
        return complex(rot * _h_kernel(t, x, nmh, sgn * md.a, params))
    return complex(_f_kernel(t, x, params))


def _imag_rotation(tau, md, params, regime, what):
    """Rotate tau onto the positive axis, map the data, call the real-axis code."""
    e1, e2 = params.eps1, params.eps2
    rot = cmath.exp(-0.5j * math.pi * e1)
    target = apply_imag_symmetry(md, e1, e2)
    pre = invert_symmetry(target, 0, e2)
    p0 = EquationParams(pre.a, params.b, params.epsilon, 0, e2)
    t = rot * tau
    if regime == "generic":
        fn = {"u": u_leading, "H": h_leading, "f": f_leading}[what]
        val = fn(t, pre, p0)
    else:
        fn = {"u": u_leading_half, "H": h_leading_half, "f": f_leading_half}[what]
        val = fn(t, pre, p0, reduction=(regime == "reduction"), guard=False)
    return val if what == "f" else rot * val


def _imag(tau, md, params, regime, what, method):
    if method == "direct":
        return _imag_direct(tau, md, params, regime, what)
    if method == "rotation":
        return _imag_rotation(tau, md, params, regime, what)
    raise ValueError(f"unknown method {method!r}")


def u_leading_imag(tau, md, params, regime: str = "generic", method: str = "direct") -> complex:
    return _imag(tau, md, params, regime, "u", method)


def h_leading_imag(tau, md, params, regime: str = "generic", method: str = "direct") -> complex:
    return _imag(tau, md, params, regime, "H", method)


def f_leading_imag(tau, md, params, regime: str = "generic", method: str = "direct") -> complex:
    return _imag(tau, md, params, regime, "f", method)


# --- lattices ------------------------------------------------------------------------

_KIND_SHIFT = {"pole": 0.0, "zero_plus": 2 * THETA0, "zero_minus": -2 * THETA0}


def _lattice_scalars(md, params, imag: bool, reduction: bool):
    e1, e2 = params.eps1, params.eps2
    if imag:
        m = apply_imag_symmetry(md, e1, e2)
        sgn = (-1) ** (1 + abs(e2))
        ray = cmath.exp(0.5j * math.pi * e1)
    else:
        m = apply_symmetry(md, e1, e2)
        sgn = (-1) ** abs(e2)
        ray = cmath.exp(1j * math.pi * e1)
    if reduction:
        r1, const = _reduction_scalars(m, md.a, sgn)
    else:
        r1, const = _half_scalars(m, md.a, sgn, DEFAULT_DOMAIN.half_tol)
    # the phase is x = phi + r1 ln(phi) + const; the lattice constant is
    # rho2 = const + r1 ln(2 pi) (so that x ~ phi + r1 ln m + rho2 at phi = 2 pi m)
    rho2 = const + r1 * math.log(2 * math.pi)
    return r1, rho2, const, ray


def lattice(md: MonodromyData, params: EquationParams, m_range: Iterable[int],
            kinds: Iterable[str] = ("zero_minus", "pole", "zero_plus"),
            imag: bool = False, reduction: bool = False, refine: bool = False,
            max_iter: int = 50, tol: float = 1e-12) -> list:
    r1, rho2, const, ray = _lattice_scalars(md, params, imag, reduction)
    out = []
    for m in m_range:
        for kind in kinds:
            tau, terms = lattice_closed_form(m, r1, rho2 + _KIND_SHIFT[kind], params, ray)
            refined = None
            if refine:
                refined = _refine(m, kind, r1, const, ray, params, tau, max_iter, tol)
            out.append(LatticePoint(m, kind, tau, terms, refined))
    return out


def _refine(m, kind, r1, const, ray, params, tau0, max_iter, tol):
    # solve x(tau) = 2 pi m - shift with x = phi + r1 ln phi + const
    target = 2 * math.pi * m - _KIND_SHIFT[kind]
    rot = 1 / ray
    ph = complex(phi_of_tau(rot * tau0, params))
    for _ in range(max_iter):
        new = target - r1 * cmath.log(ph) - const
        if abs(new - ph) < tol * max(1.0, abs(ph)):
            ph = new
            break
        ph = new
    return complex(tau_of_phi(ph, params, ray))


def lattice_phase(tau, md, params, imag: bool = False, reduction: bool = False) -> complex:
    """The half-regime phase whose level sets define the lattices."""
    r1, _, const, ray = _lattice_scalars(md, params, imag, reduction)
    ph = complex(phi_of_tau(tau / ray, params))
    return ph + r1 * cmath.log(ph) + const


def pole_lattice(md, params, m_range, **kw) -> list:
    return lattice(md, params, m_range, kinds=("pole",), **kw)


def zero_lattice(md, params, m_range, **kw) -> list:
    return lattice(md, params, m_range, kinds=("zero_minus", "zero_plus"), **kw)


# --- inverse-problem profile ----------------------------------------------------------

def inverse_profile(tau, md: MonodromyData, params: EquationParams) -> InverseProfile:
    vt = phase_vartheta_tilde(tau, md, params)
    nu = nu_tilde(md, 0, 0, normalize=True)
    a = md.a
    t0 = THETA0
    c0, s0 = cmath.cos(t0), cmath.sin(t0)
    cp = cmath.cos((vt + t0) / 2)
    cm = cmath.cos((vt - t0) / 2)
    if min(abs(cp), abs(cm)) < DEFAULT_DOMAIN.guard:
        raise NearSingularity("cosine factor of the profile vanishes", min(abs(cp), abs(cm)))
    alpha2 = params.eb ** (1 / 3) / 2
    r_hat0 = 6 * c0 / (cp * cm)
    r_hat0_alt = 12 / (1 - 1j * SQRT2 * cmath.cos(vt))
    u_hat0 = -1.5 / cp ** 2
    br = (nu - 0.5 + 1j / (2 * SQRT3) * (a - 0.5j)
          - cmath.sin(vt) * c0 / (2 * SQRT2 * cp * cm))
    h0 = 2j * SQRT3 * alpha2 * br
    kap = (vt + t0) / 2
    kappa0_sq = (8j * SQRT3 * br
                 + 4 * (a - 0.5j) * cp ** 2 / (cmath.cos(kap + t0) * cmath.cos(kap - t0)))
    alpha = math.sqrt(alpha2)
    Phi = (-3j * alpha2 * cbrt2(tau) - 1j * a / 6 * cmath.log(tau)
           + 1j * math.pi * (nu - 0.5) + cmath.log(md.g11) + 2 * math.log(2 * alpha)
           + 0.5j * a * math.log(alpha2 / 2) - (nu - 0.5) * LN_2_PLUS_SQRT3)
    sqrt_b = cm / (4 * c0 * cp) * cmath.exp(Phi)
    ck, ckp, ckm = cmath.cos(kap), cmath.cos(kap + t0), cmath.cos(kap - t0)
    a4 = alpha2 ** 2
    a6 = alpha2 ** 3
    sab = 2 * a4 * ckp * ckm / ck ** 2
    ad = 4j * a6 * c0 * ckp * ckm / ck ** 2 * (c0 + s0 ** 2 / (ck * ckm))
    second = c0 * s0 ** 2 / (ck * ckm) + s0 ** 2 / (ckp * ckm) - c0 ** 2
    bc = -4j * a6 * ckp * ckm / ck ** 2 * second
    cd = -4 * a4 * (c0 ** 2 + c0 / (ck * ckm)) * second
    return InverseProfile(complex(r_hat0), complex(r_hat0_alt), complex(u_hat0), complex(h0),
                          complex(kappa0_sq), complex(sqrt_b), complex(Phi), complex(kap),
                          complex(sab), complex(ad), complex(bc), complex(cd))


def log_deriv_kernel(tau, x, params: EquationParams) -> complex:
    s = cmath.sin(x / 2)
    return complex(3 * SQRT3 * _sign2(params) * cbrt(params.eb) / cbrt(tau) * cmath.cos(x / 2)
                   / (s * cmath.sin(x / 2 - THETA0) * cmath.sin(x / 2 + THETA0)))


def lattice_closed_form(m: int, rho1: complex, rho2: complex, params: EquationParams,
                        ray: complex = 1.0) -> tuple:
    """Closed-form lattice point and its two correction terms."""
    if m <= 0:
        raise ValueError("lattice index m must be positive")
    scale = 2 * math.pi / (3 * SQRT3 * abs(cbrt(params.eb)))
    t1 = -3 * rho1 / (4 * math.pi) * math.log(m) / m
    t2 = -3 * rho2 / (4 * math.pi) / m
    return complex(ray * (scale * m) ** 1.5 * (1 + t1 + t2)), (complex(t1), complex(t2))


def log_deriv_leading(tau, md, params, regime: str = "generic",
                      domain: DomainConfig = DEFAULT_DOMAIN) -> tuple:
    """Leading term of u'/u, and u' rebuilt from the f asymptotics for seeding."""
    if regime == "generic":
        ctx = phase_vartheta(tau, md, params)
        _guard_generic(ctx.phase, domain)
    else:
        ctx = _half_ctx(tau, md, params, regime == "reduction")
    x = ctx.phase
    ld = log_deriv_kernel(tau, x, params)
    u = _u_both(tau, x, params)
    fmain = complex(_f_kernel(tau, x, params))
    du = 1j * params.b + 4 * u * fmain / tau
    return complex(ld), complex(du)


# --- regime selection -------------------------------------------------------------------

def select_regime(md, params, axis: str = "real", tol: float = DEFAULT_DOMAIN.half_tol) -> str:
    imag = axis == "imag"
    nu = nu_tilde(md, params.eps1, params.eps2, normalize=True, imag=imag)
    if abs(nu.real - 0.5) > tol:
        return "generic"
    if imag:
        m = apply_imag_symmetry(md, params.eps1, params.eps2)
    else:
        m = apply_symmetry(md, params.eps1, params.eps2)
    red = (abs(m.g11 + m.g22.conjugate()) < 1e-9 and abs(m.g12 + m.g21.conjugate()) < 1e-9
           and abs(md.a.imag) < 1e-12 and abs(m.s00.real) < 1e-9)
    return "reduction" if red else "half"


def evaluate(tau, md: MonodromyData, params: EquationParams, axis: str = "real",
             regime: str | None = None, domain: DomainConfig = DEFAULT_DOMAIN) -> AsymptoticValue:
    """u, u', H, f at tau with the regime chosen from the data."""
    regime = regime or select_regime(md, params, axis)
    if axis == "imag":
        u = u_leading_imag(tau, md, params, regime)
        H = h_leading_imag(tau, md, params, regime)
        f = f_leading_imag(tau, md, params, regime)
        du = 1j * params.b + 4 * u * f / tau
        x = _imag_phase_direct(tau, md, params, regime)[0]
        nu = nu_tilde(md, params.eps1, params.eps2, normalize=True, imag=True)
    else:
        if regime == "generic":
            ctx = phase_vartheta(tau, md, params)
            _guard_generic(ctx.phase, domain)
        else:
            ctx = _half_ctx(tau, md, params, regime == "reduction")
            _guard_half(ctx, domain)
        x, nu = ctx.phase, ctx.nu_tilde_plus_1
        u = _u_both(tau, x, params)
        H = complex(_h_kernel(tau, x, nu - 0.5, _sign2(params) * md.a, params))
        f = complex(_f_kernel(tau, x, params))
        du = 1j * params.b + 4 * u * f / tau
    if regime == "generic":
        es = error_scale(tau, nu)
    else:
        es = error_scale(tau, half=True, delta=domain.delta)
    return AsymptoticValue(complex(tau), u, complex(du), H, f, es, regime, complex(x))
