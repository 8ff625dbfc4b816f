"""Equation parameters, monodromy data and the symmetry actions on them.

Monodromy data live on a four-dimensional complex variety cut out by five
polynomial equations in (s00, s0inf, s1inf, g11, g12, g21, g22) with
exponential coefficients in a. Continuation of the large-tau asymptotics
to other rays is done by mapping the data with one of the real-axis maps
``apply_symmetry`` or the imaginary-axis maps ``apply_imag_symmetry``.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ._roots import as_complex, log_gamma

__all__ = [
    "THETA0",
    "EquationParams",
    "MonodromyData",
    "ManifoldCheck",
    "DerivedScalars",
    "PreconditionError",
    "validate_manifold",
    "apply_symmetry",
    "apply_imag_symmetry",
    "invert_symmetry",
    "nu_tilde",
    "rho1",
    "rho2",
    "rho0",
    "rho0_sharp",
    "derived_scalars",
    "check_singular_real_reduction",
    "check_singular_imag_reduction",
    "sample_manifold_point",
    "sample_singular_real",
    "sample_with_nu",
    "closed_form_point",
]

# cos(THETA0) = i/sqrt(2), sin(THETA0) = -sqrt(3/2)
THETA0 = complex(-math.pi / 2, 0.5 * math.log(2 + math.sqrt(3)))
LN_2_PLUS_SQRT3 = math.log(2 + math.sqrt(3))


class PreconditionError(ValueError):
    """Input violates the hypotheses of the requested formula."""


@dataclass(frozen=True)
class EquationParams:
    a: complex
    b: float
    epsilon: int = 1
    eps1: int = 0
    eps2: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", float(self.b))
        if self.b == 0:
            raise ValueError("b must be nonzero")
        if self.epsilon not in (-1, 1):
            raise ValueError("epsilon must be +1 or -1")
        if self.eps1 not in (-1, 0, 1) or self.eps2 not in (-1, 0, 1):
            raise ValueError("eps1, eps2 must lie in {-1, 0, 1}")
        sign = 1 if self.epsilon * self.b > 0 else -1
        if sign != (-1) ** abs(self.eps2):
            raise ValueError(
                f"sign(epsilon*b) = {sign} is inconsistent with eps2 = {self.eps2}")

    @property
    def eb(self) -> float:
        """The real product epsilon*b."""
        return self.epsilon * self.b

    def to_dict(self) -> dict:
        return {"a": [self.a.real, self.a.imag], "b": self.b,
                "epsilon": self.epsilon, "eps1": self.eps1, "eps2": self.eps2}

    @classmethod
    def from_dict(cls, d: dict) -> "EquationParams":
        return cls(a=as_complex(d["a"]), b=float(d["b"]), epsilon=int(d["epsilon"]),
                   eps1=int(d.get("eps1", 0)), eps2=int(d.get("eps2", 0)))


_MD_KEYS = ("a", "s00", "s0inf", "s1inf", "g11", "g12", "g21", "g22")


@dataclass(frozen=True)
class MonodromyData:
    a: complex
    s00: complex
    s0inf: complex
    s1inf: complex
    g11: complex
    g12: complex
    g21: complex
    g22: complex

    def __post_init__(self):
        for k in _MD_KEYS:
            object.__setattr__(self, k, complex(getattr(self, k)))

    @property
    def G(self) -> np.ndarray:
        return np.array([[self.g11, self.g12], [self.g21, self.g22]], dtype=complex)

    @classmethod
    def from_G(cls, a, s00, s0inf, s1inf, G) -> "MonodromyData":
        G = np.asarray(G)
        return cls(a, s00, s0inf, s1inf, G[0, 0], G[0, 1], G[1, 0], G[1, 1])

    def negated(self) -> "MonodromyData":
        return replace(self, g11=-self.g11, g12=-self.g12, g21=-self.g21, g22=-self.g22)

    def close_to(self, other: "MonodromyData", tol: float = 1e-10) -> bool:
        """Entrywise comparison, with G identified with -G."""
        s = np.array([self.a - other.a, self.s00 - other.s00,
                      self.s0inf - other.s0inf, self.s1inf - other.s1inf])
        if np.max(np.abs(s)) > tol:
            return False
        d = min(np.max(np.abs(self.G - other.G)), np.max(np.abs(self.G + other.G)))
        return bool(d <= tol)

    def to_dict(self) -> dict:
        return {k: [getattr(self, k).real, getattr(self, k).imag] for k in _MD_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> "MonodromyData":
        missing = [k for k in _MD_KEYS if k not in d]
        if missing:
            raise ValueError(f"monodromy data missing keys {missing}")
        extra = set(d) - set(_MD_KEYS)
        if extra:
            raise ValueError(f"unknown monodromy keys {sorted(extra)}")
        return cls(**{k: as_complex(d[k]) for k in _MD_KEYS})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class ManifoldCheck:
    residuals: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return all(r < self.tol for r in self.residuals)

    @property
    def max_residual(self) -> float:
        return max(self.residuals)


def manifold_residuals(md: MonodromyData) -> tuple:
    a, s00, s0, s1 = md.a, md.s00, md.s0inf, md.s1inf
    g11, g12, g21, g22 = md.g11, md.g12, md.g21, md.g22
    em = cmath.exp(-math.pi * a)
    ep = cmath.exp(math.pi * a)
    r = (
        s0 * s1 - (-1 - em * em - 1j * s00 * em),
        g22 * g21 - g11 * g12 + s00 * g11 * g22 - 1j * em,
        g11 ** 2 - g21 ** 2 - s00 * g11 * g21 - 1j * s0 * em,
        g22 ** 2 - g12 ** 2 + s00 * g12 * g22 - 1j * s1 * ep,
        g11 * g22 - g12 * g21 - 1,
    )
    return tuple(abs(x) for x in r)


def validate_manifold(md: MonodromyData, tol: float = 1e-10) -> ManifoldCheck:
    """Residual magnitude of each of the five defining equations."""
    return ManifoldCheck(manifold_residuals(md), tol)


# --- real-axis maps ---------------------------------------------------------

def _real_map(md: MonodromyData, eps1: int, eps2: int) -> MonodromyData:
    a, s00, s0, s1 = md.a, md.s00, md.s0inf, md.s1inf
    g11, g12, g21, g22 = md.g11, md.g12, md.g21, md.g22
    E = cmath.exp(math.pi * a)
    h = cmath.exp(math.pi * a / 2)
    key = (eps1, eps2)
    if key == (0, 0):
        return md
    if key == (0, -1):
        t = g12 - s00 * g22
        s = (s1 * E, s0 * E)
        g = (-g22 * h, -(g21 + s0 * g22) / h, -t * h, -(g11 - s00 * g21 + t * s0) / h)
    elif key == (0, 1):
        s = (s1 * E, s0 * E)
        g = (-1j * g12 * h, -1j * (g11 + s0 * g12) / h,
             -1j * g22 * h, -1j * (g21 + s0 * g22) / h)
    elif key == (-1, 0):
        s = (-s0 / E, -s1 * E)
        g = (g21 / h, -g22 * h, (g11 - s00 * g21) / h, -(g12 - s00 * g22) * h)
    elif key == (-1, -1):
        t = g12 - s00 * g22
        w = g22 - t * s00
        s = (-s1, -s0 * E * E)
        g = (t, -g11 + s00 * g21 - t * s0, w,
             -g21 + (g11 - s00 * g21) * s00 - w * s0)
    elif key == (-1, 1):
        t = g12 - s00 * g22
        s = (-s1, -s0 * E * E)
        g = (1j * g22, -1j * (g21 + s0 * g22), 1j * t,
             -1j * (g11 - s00 * g21 + t * s0))
    elif key == (1, 0):
        s = (-s0 * E, -s1 / E)
        g = ((g21 + s00 * g11) * h, -(g22 + s00 * g12) / h, g11 * h, -g12 / h)
    elif key == (1, -1):
        s = (-s1 * E * E, -s0)
        g = (g12 * E, -(g11 + s0 * g12) / E, g22 * E, -(g21 + s0 * g22) / E)
    elif key == (1, 1):
        t = g22 + s00 * g12
        s = (-s1 * E * E, -s0)
        # (2,1) entry i*g12*e^{pi a}: completes the pattern of (1,-1) and keeps det = 1
        g = (1j * t * E, -1j * (g21 + s00 * g11 + t * s0) / E,
             1j * g12 * E, -1j * (g11 + s0 * g12) / E)
    else:
        raise ValueError(f"no real-axis map for (eps1, eps2) = {key}")
    a_new = a * (-1) ** abs(eps2)
    return MonodromyData(a_new, s00, s[0], s[1], *g)


def apply_symmetry(md: MonodromyData, eps1: int, eps2: int) -> MonodromyData:
    """Map data to the labels used for the ray arg(tau) = pi*eps1, arg(eps*b) = pi*eps2."""
    return _real_map(md, eps1, eps2)


# --- imaginary-axis maps ----------------------------------------------------

def _imag_map(md: MonodromyData, eps1: int, eps2: int) -> MonodromyData:
    a, s00, s0, s1 = md.a, md.s00, md.s0inf, md.s1inf
    g11, g12, g21, g22 = md.g11, md.g12, md.g21, md.g22
    q = cmath.exp(math.pi * a / 4)
    e2 = cmath.exp(math.pi * a / 2)
    key = (eps1, eps2)
    if key == (-1, 0):
        s = (s1 * e2 ** 3, s0 * e2)
        g = (-g22 * q ** 3, -(g21 + s0 * g22) / q ** 3, (s00 * g22 - g12) * q ** 3,
             (s00 * (g21 + s0 * g22) - g11 - s0 * g12) / q ** 3)
    elif key == (-1, -1):
        s = (s0 / e2, s1 * e2)
        g = (-1j * g21 / q, -1j * g22 * q, -1j * (g11 - s00 * g21) / q,
             -1j * (g12 - s00 * g22) * q)
    elif key == (-1, 1):
        s = (s0 / e2, s1 * e2)
        g = (g11 / q, g12 * q, g21 / q, g22 * q)
    elif key == (1, 0):
        s = (s1 * e2, s0 * e2 ** 3)
        g = (-1j * g12 * q, -1j * (g11 + s0 * g12) / q, -1j * g22 * q,
             -1j * (g21 + s0 * g22) / q)
    elif key == (1, -1):
        s = (s0 * e2, s1 / e2)
        g = (g11 * q, g12 / q, g21 * q, g22 / q)
    elif key == (1, 1):
        s = (s0 * e2, s1 / e2)
        g = (1j * (g21 + s00 * g11) * q, 1j * (g22 + s00 * g12) / q,
             1j * g11 * q, 1j * g12 / q)
    else:
        raise ValueError(f"no imaginary-axis map for (eps1, eps2) = {key}")
    a_new = a * (-1) ** (1 + abs(eps2))
    return MonodromyData(a_new, s00, s[0], s[1], *g)


def apply_imag_symmetry(md: MonodromyData, eps1: int, eps2: int) -> MonodromyData:
    """Map data to the labels used for the ray arg(tau) = pi*eps1/2."""
    return _imag_map(md, eps1, eps2)


def invert_symmetry(image: MonodromyData, eps1: int, eps2: int,
                    imag: bool = False) -> MonodromyData:
    """Preimage of ``image`` under one of the maps.

    Every map is linear in (s0inf, s1inf) for fixed a, and linear in the
    g-block for fixed (a, s00, s0inf), so the inverse is two small solves.
    """
    fwd: Callable = _imag_map if imag else _real_map
    sign = (-1) ** (1 + abs(eps2)) if imag else (-1) ** abs(eps2)
    a = image.a * sign
    s00 = image.s00
    z = dict(g11=0, g12=0, g21=0, g22=0)
    S = np.empty((2, 2), dtype=complex)
    for j, (x, y) in enumerate(((1, 0), (0, 1))):
        m = fwd(MonodromyData(a, s00, x, y, **z), eps1, eps2)
        S[:, j] = (m.s0inf, m.s1inf)
    s0, s1 = np.linalg.solve(S, [image.s0inf, image.s1inf])
    M = np.empty((4, 4), dtype=complex)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1
        m = fwd(MonodromyData(a, s00, s0, s1, *e), eps1, eps2)
        M[:, j] = (m.g11, m.g12, m.g21, m.g22)
    g = np.linalg.solve(M, [image.g11, image.g12, image.g21, image.g22])
    return MonodromyData(a, s00, s0, s1, *g)


def _mapped(md: MonodromyData, eps1: int, eps2: int, imag: bool) -> MonodromyData:
    return apply_imag_symmetry(md, eps1, eps2) if imag else apply_symmetry(md, eps1, eps2)


# --- derived scalars --------------------------------------------------------

def nu_tilde(md: MonodromyData, eps1: int = 0, eps2: int = 0, normalize: bool = False,
             imag: bool = False) -> complex:
    """(i/2pi) ln(g11 g22) of the mapped data, principal logarithm.

    With ``normalize`` the result is shifted by an integer so that its real
    part lies in [0, 1).
    """
    m = _mapped(md, eps1, eps2, imag)
    p = m.g11 * m.g22
    if p == 0:
        raise PreconditionError("g11*g22 vanishes; nu_tilde undefined")
    nu = 1j / (2 * math.pi) * cmath.log(p)
    if normalize:
        nu -= math.floor(nu.real)
    return nu


def _half_check(md: MonodromyData, eps1: int, eps2: int, imag: bool, tol: float):
    m = _mapped(md, eps1, eps2, imag)
    p = -m.g11 * m.g22
    if p == 0:
        raise PreconditionError("g11*g22 vanishes")
    nu = nu_tilde(md, eps1, eps2, normalize=True, imag=imag)
    if abs(nu.real - 0.5) > tol:
        raise PreconditionError(
            f"Re(nu_tilde + 1) = {nu.real:.12g} is not 1/2 (required for the half regime)")
    return m, p


def rho1(md: MonodromyData, eps1: int = 0, eps2: int = 0, tol: float = 1e-9,
         imag: bool = False) -> float:
    """(1/2pi) ln(-g11 g22) on the branch with zero imaginary part."""
    _, p = _half_check(md, eps1, eps2, imag, tol)
    return math.log(abs(p)) / (2 * math.pi)


def rho2(md: MonodromyData, eps1: int = 0, eps2: int = 0, tol: float = 1e-9,
         imag: bool = False) -> complex:
    """Constant term of the pole-lattice phase in the half regime."""
    m, p = _half_check(md, eps1, eps2, imag, tol)
    r1 = math.log(abs(p)) / (2 * math.pi)
    sgn = (-1) ** (1 + abs(eps2)) if imag else (-1) ** abs(eps2)
    a = md.a
    R = m.g11 * m.g12 / (m.g21 * m.g22)
    arg_gamma = log_gamma(0.5 + 1j * r1).imag
    re = (r1 * math.log(24 * math.pi) + sgn * a.real * LN_2_PLUS_SQRT3 + math.pi / 2
          - 0.5 * cmath.phase(R) - arg_gamma)
    im = sgn * a.imag * LN_2_PLUS_SQRT3 + 0.5 * math.log(abs(R))
    return complex(re, im)


def rho0(md: MonodromyData, eps1: int = 0, eps2: int = 0, imag: bool = False) -> float:
    """(1/pi) ln|g11| of the mapped data (singular reductions)."""
    m = _mapped(md, eps1, eps2, imag)
    return math.log(abs(m.g11)) / math.pi


def rho0_sharp(md: MonodromyData, eps1: int = 0, eps2: int = 0,
               imag: bool = False) -> float:
    m = _mapped(md, eps1, eps2, imag)
    r0 = math.log(abs(m.g11)) / math.pi
    sgn = (-1) ** (1 + abs(eps2)) if imag else (-1) ** abs(eps2)
    # arg(g11 g12 Gamma(1/2 + i r0)) taken continuously through log-Gamma
    arg = cmath.phase(m.g11 * m.g12) + log_gamma(0.5 + 1j * r0).imag
    return (r0 * math.log(24 * math.pi) + sgn * md.a.real * LN_2_PLUS_SQRT3
            - math.pi / 2 - arg)


@dataclass(frozen=True)
class DerivedScalars:
    nu_tilde_plus_1: complex
    rho1: float | None
    rho2: complex | None
    rho0: float | None
    rho0_sharp: float | None
    theta0: complex = THETA0


def derived_scalars(md: MonodromyData, eps1: int = 0, eps2: int = 0,
                    imag: bool = False, tol: float = 1e-9) -> DerivedScalars:
    nu = nu_tilde(md, eps1, eps2, normalize=True, imag=imag)
    r1 = r2 = r0 = r0s = None
    if abs(nu.real - 0.5) <= tol:
        r1 = rho1(md, eps1, eps2, tol, imag)
        r2 = rho2(md, eps1, eps2, tol, imag)
        r0 = rho0(md, eps1, eps2, imag)
        r0s = rho0_sharp(md, eps1, eps2, imag)
    return DerivedScalars(nu, r1, r2, r0, r0s)


# --- reductions ---------------------------------------------------------------

def _reduction(m: MonodromyData, a: complex, tol: float) -> bool:
    checks = (
        abs(m.s00 + m.s00.conjugate()),
        abs(m.s0inf + m.s1inf.conjugate() * cmath.exp(2 * math.pi * a)),
        abs(m.g11 + m.g22.conjugate()),
        abs(m.g12 + m.g21.conjugate()),
        abs(a.imag),
    )
    return all(c <= tol for c in checks)


def check_singular_real_reduction(md: MonodromyData, eps1: int = 0, eps2: int = 0,
                                  tol: float = 1e-10) -> bool:
    m = apply_symmetry(md, eps1, eps2)
    return _reduction(m, m.a, tol)


def check_singular_imag_reduction(md: MonodromyData, eps1: int = 1, eps2: int = 0,
                                  tol: float = 1e-10) -> bool:
    m = apply_imag_symmetry(md, eps1, eps2)
    return _reduction(m, m.a, tol)


# --- sampling oracles ---------------------------------------------------------

def _complete(a, s00, g11, g12, g21) -> MonodromyData:
    g22 = (1 + g12 * g21) / g11
    em = cmath.exp(-math.pi * a)
    s0 = (g11 ** 2 - g21 ** 2 - s00 * g11 * g21) / (1j * em)
    s1 = (g22 ** 2 - g12 ** 2 + s00 * g12 * g22) / (1j * cmath.exp(math.pi * a))
    return MonodromyData(a, s00, s0, s1, g11, g12, g21, g22)


def closed_form_point(a: float, g11: complex) -> MonodromyData:
    """The diagonal family g12 = g21 = 0, g11 g22 = 1."""
    g22 = 1 / g11
    return MonodromyData(a, 1j * cmath.exp(-math.pi * a),
                         -1j * g11 ** 2 * cmath.exp(math.pi * a),
                         -1j * g22 ** 2 * cmath.exp(-math.pi * a), g11, 0, 0, g22)


def sample_manifold_point(rng: np.random.Generator, a: complex | None = None,
                          scale: float = 1.0) -> MonodromyData:
    """Random point on the manifold by elimination.

    (a, s00, g11, g12) are drawn at random. Combining the determinant and
    the second equation gives a quadratic in g21; the root of smaller
    modulus is taken. The remaining entries follow linearly. The first
    equation is then implied by the other four.
    """
    def c():
        return complex(*rng.normal(size=2)) * scale

    if a is None:
        a = complex(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
    s00, g11, g12 = c(), c(), c()
    em = cmath.exp(-math.pi * a)
    # (g12/g11) x^2 + (1/g11 + s00 g12) x + (s00 - g11 g12 - i e^{-pi a}) = 0
    roots = np.roots([g12 / g11, 1 / g11 + s00 * g12, s00 - g11 * g12 - 1j * em])
    g21 = complex(roots[np.argmin(np.abs(roots))])
    return _complete(a, s00, g11, g12, g21)


def sample_with_nu(rng: np.random.Generator, nu_plus_1: complex,
                   a: complex | None = None) -> MonodromyData:
    """Random manifold point with g11 g22 = exp(-2 pi i (nu_tilde + 1)) prescribed."""
    if a is None:
        a = complex(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))
    g11, g12 = (complex(*rng.normal(size=2)) for _ in range(2))
    prod = cmath.exp(-2j * math.pi * complex(nu_plus_1))
    g22 = prod / g11
    g21 = (prod - 1) / g12
    s00 = (1j * cmath.exp(-math.pi * a) - g22 * g21 + g11 * g12) / prod
    return _complete(a, s00, g11, g12, g21)


def sample_singular_real(rng: np.random.Generator, a: float | None = None,
                         log_g11: float | None = None) -> MonodromyData:
    """Random data satisfying the singular real reduction at eps1 = eps2 = 0.

    With g11 = x, g22 = -conj(x), g12 = y, g21 = -conj(y) the determinant
    forces |y|^2 = 1 + |x|^2 and the second equation fixes the purely
    imaginary s00.
    """
    if a is None:
        a = float(rng.uniform(-0.5, 0.5))
    r = math.exp(log_g11) if log_g11 is not None else float(rng.uniform(0.3, 2.0))
    x = r * cmath.exp(1j * rng.uniform(-math.pi, math.pi))
    y = math.sqrt(1 + r * r) * cmath.exp(1j * rng.uniform(-math.pi, math.pi))
    s00 = -1j * (math.exp(-math.pi * a) + 2 * (x * y).imag) / (r * r)
    return _complete(complex(a, 0), s00, x, y, -y.conjugate())
