"""Integration of the nonlinear flow for (u, u', phi) along complex-tau paths.

The stepper is the Dormand-Prince 8(5,3) pair (tableau taken from scipy) with
a PI step-size controller, applied to dy/ds = tau'(s) F(tau(s), y) for a path
tau(s) parametrised by arc length. Movable poles met on the path are crossed
by a vault: back off to a circle around the estimated centre, integrate the
arc, identify the singularity with ``fit_local`` and restart from the local
series on the far side.
"""
from __future__ import annotations

import cmath
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from . import asymptotics as asy
from .core import EquationParams, MonodromyData, PreconditionError
from .laurent import FitFailure, LocalFit, fit_local, series_at_pole, series_at_zero

__all__ = [
    "IntegrationControl",
    "SolutionState",
    "TrajectoryEvent",
    "Trajectory",
    "IntegrationError",
    "SingularRHS",
    "hamiltonian",
    "aux_f",
    "rhs",
    "rhs_jacobian",
    "integrate",
    "integrate_path",
    "seed_from_asymptotics",
    "locate_singularities",
    "HoleReport",
    "LocateResult",
]


class SingularRHS(ArithmeticError):
    """u = 0 or tau = 0: the right-hand side is not defined."""


class IntegrationError(RuntimeError):
    def __init__(self, message: str, samples: Sequence = ()):
        super().__init__(message)
        self.samples = list(samples)


@dataclass(frozen=True)
class IntegrationControl:
    tol: float = 1e-12
    max_step: float = 0.5
    min_step: float = 1e-13
    max_steps: int = 2_000_000
    blowup: float = 1e6
    zero_threshold: float = 1e-6
    vault_phi_radius: float = 0.3
    origin_exclusion: float = 1e-3
    fit_order: int = 12

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def hamiltonian(tau, u, du, params: EquationParams):
    am = params.a - 0.5j
    return (am * params.b / u + am * am / (2 * tau)
            + tau * (du * du + params.b ** 2) / (4 * u * u) + 4 * params.epsilon * u)


def aux_f(tau, u, du, params: EquationParams):
    return tau * (du - 1j * params.b) / (4 * u) - (1j * params.a + 0.5) / 2


@dataclass(frozen=True)
class SolutionState:
    tau: complex
    u: complex
    du: complex
    phi: complex
    params: EquationParams = field(repr=False, compare=False)
    gauge_tau: complex | None = field(default=None, compare=False)

    @property
    def H(self) -> complex:
        return complex(hamiltonian(self.tau, self.u, self.du, self.params))

    @property
    def f(self) -> complex:
        return complex(aux_f(self.tau, self.u, self.du, self.params))

    def dphi(self) -> complex:
        return 2 * self.params.a / self.tau + self.params.b / self.u

    def b_reconstructed(self, dphi: complex | None = None) -> complex:
        """u (phi' - 2a/tau); with phi' measured independently this checks b."""
        d = self.dphi() if dphi is None else dphi
        return self.u * (d - 2 * self.params.a / self.tau)

    def vector(self) -> np.ndarray:
        return np.array([self.u, self.du, self.phi], dtype=complex)

    def with_values(self, tau, y) -> "SolutionState":
        return SolutionState(complex(tau), complex(y[0]), complex(y[1]), complex(y[2]),
                             self.params, self.gauge_tau)


@dataclass(frozen=True)
class TrajectoryEvent:
    kind: str
    center: complex
    free_param: complex
    fitted_by: dict

    def to_dict(self) -> dict:
        out = {"kind": self.kind,
               "center": [self.center.real, self.center.imag],
               "free_param": [self.free_param.real, self.free_param.imag]}
        out["fitted_by"] = {k: (v if not isinstance(v, complex) else [v.real, v.imag])
                            for k, v in self.fitted_by.items()}
        return out


@dataclass
class Trajectory:
    samples: list
    events: list
    waypoints: list

    @property
    def final(self) -> SolutionState:
        return self.samples[-1]

    def to_csv(self, provenance: str = "") -> str:
        buf = io.StringIO()
        if provenance:
            buf.write(f"# {provenance}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau_re", "tau_im", "u_re", "u_im", "H_re", "H_im", "f_re", "f_im",
                    "phi_re", "phi_im"])
        for s in self.samples:
            H, f = s.H, s.f
            w.writerow([repr(x) for x in (s.tau.real, s.tau.imag, s.u.real, s.u.imag,
                                          H.real, H.imag, f.real, f.imag,
                                          s.phi.real, s.phi.imag)])
        return buf.getvalue()


# --- right-hand side ----------------------------------------------------------------

def _F(tau, y, a, b, eps):
    u, du = y[0], y[1]
    if u == 0 or tau == 0:
        raise SingularRHS(f"singular right-hand side at tau = {tau}")
    ddu = du * du / u - du / tau + (-8 * eps * u * u + 2 * a * b) / tau + b * b / u
    return np.array([du, ddu, 2 * a / tau + b / u])


def rhs(state: SolutionState, params: EquationParams | None = None) -> tuple:
    p = params or state.params
    d = _F(state.tau, (state.u, state.du), p.a, p.b, p.epsilon)
    return complex(d[0]), complex(d[1]), complex(d[2])


def rhs_jacobian(state: SolutionState, params: EquationParams | None = None) -> np.ndarray:
    """d(u', u'', phi')/d(u, u', phi)."""
    p = params or state.params
    t, u, du = state.tau, state.u, state.du
    b, eps = p.b, p.epsilon
    return np.array([
        [0, 1, 0],
        [-du * du / u ** 2 - 16 * eps * u / t - b * b / u ** 2, 2 * du / u - 1 / t, 0],
        [-b / u ** 2, 0, 0]], dtype=complex)


# --- paths ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Path:
    """tau(s) for s in [0, length] with derivative dtau(s)."""
    tau: Callable
    dtau: Callable
    length: float


def _segment(t0: complex, t1: complex) -> _Path:
    d = t1 - t0
    L = abs(d)
    e = d / L if L else 0
    return _Path(lambda s: t0 + e * s, lambda s: e, L)


def _arc(center: complex, radius: float, th0: float, th1: float) -> _Path:
    L = radius * abs(th1 - th0)
    sg = 1.0 if th1 >= th0 else -1.0

    def tau(s):
        return center + radius * cmath.exp(1j * (th0 + sg * s / radius))

    def dtau(s):
        return 1j * sg * cmath.exp(1j * (th0 + sg * s / radius))
    return _Path(tau, dtau, L)


def _phi_circle(phi_c: complex, r: float, params: EquationParams, ray: complex,
                th0: float = 0.0) -> _Path:
    # circle of radius r in the phi-plane, mapped to tau; s is the phi-arc length
    def tau(s):
        return complex(asy.tau_of_phi(phi_c + r * cmath.exp(1j * (th0 + s / r)), params, ray))

    def dtau(s):
        ph = phi_c + r * cmath.exp(1j * (th0 + s / r))
        t = complex(asy.tau_of_phi(ph, params, ray))
        return 1.5 * t / ph * 1j * cmath.exp(1j * (th0 + s / r))
    return _Path(tau, dtau, 2 * math.pi * r)


def _segment_distance_to_origin(t0: complex, t1: complex) -> float:
    d = t1 - t0
    if d == 0:
        return abs(t0)
    s = max(0.0, min(1.0, -(t0 * d.conjugate()).real / abs(d) ** 2))
    return abs(t0 + s * d)


# --- DOP853 stepper with PI control -------------------------------------------------------

_NS = _dop.N_STAGES
_A = _dop.A[:_NS, :_NS]
_B = _dop.B
_C = _dop.C[:_NS]
_E3 = _dop.E3
_E5 = _dop.E5


def _step(fun, s, y, f0, h):
    K = np.empty((_NS + 1, y.size), dtype=complex)
    K[0] = f0
    for i in range(1, _NS):
        K[i] = fun(s + _C[i] * h, y + h * (_A[i, :i] @ K[:i]))
    y_new = y + h * (_B @ K[:_NS])
    f_new = fun(s + h, y_new)
    K[_NS] = f_new
    return y_new, f_new, K


def _error_norm(K, h, y, y_new, tol):
    scale = tol * (1 + np.maximum(np.abs(y), np.abs(y_new)))
    e5 = np.abs(_E5 @ K) / scale
    e3 = np.abs(_E3 @ K) / scale
    n5, n3 = float(e5 @ e5), float(e3 @ e3)
    if n5 == 0 and n3 == 0:
        return 0.0
    return abs(h) * n5 / math.sqrt((n5 + 0.01 * n3) * y.size)


_SAFETY, _ALPHA, _BETA = 0.9, 0.7 / 8, 0.4 / 8


def _run(path: _Path, y0, tau0_state: SolutionState, params: EquationParams,
         ctrl: IntegrationControl, out: list, stop: Callable | None = None,
         h0: float | None = None):
    """Integrate along ``path``; returns (s_reached, y, stopped, h_last)."""
    a, b, eps = params.a, params.b, params.epsilon

    def fun(s, y):
        return path.dtau(s) * _F(path.tau(s), y, a, b, eps)

    s, y = 0.0, np.asarray(y0, dtype=complex)
    if path.length == 0:
        return s, y, False, h0
    f0 = fun(s, y)
    h = min(h0 or 0.01, ctrl.max_step, path.length)
    err_prev = 1.0
    n = 0
    while s < path.length:
        n += 1
        if n > ctrl.max_steps:
            raise IntegrationError("maximum number of steps exceeded", out[-20:])
        h = min(h, path.length - s)
        try:
            y_new, f_new, K = _step(fun, s, y, f0, h)
            err = _error_norm(K, h, y, y_new, ctrl.tol)
            ok = np.all(np.isfinite(y_new)) and math.isfinite(err)
        except SingularRHS:
            ok, err = False, math.inf
        if ok and err <= 1.0:
            s += h
            y, f0 = y_new, f_new
            t = path.tau(s)
            out.append(tau0_state.with_values(t, y))
            fac = _SAFETY * max(err, 1e-10) ** (-_ALPHA) * err_prev ** _BETA
            h = min(h * min(5.0, max(0.2, fac)), ctrl.max_step)
            err_prev = max(err, 1e-4)
            if stop is not None and stop(t, y):
                return s, y, True, h
        else:
            fac = 0.2 if not math.isfinite(err) else max(0.2, _SAFETY * err ** (-1 / 8))
            h *= fac
            if h < ctrl.min_step * max(1.0, path.length):
                raise IntegrationError(f"step size underflow at tau = {path.tau(s)}", out[-20:])
    return s, y, False, h


# --- vaulting --------------------------------------------------------------------

def _threshold(ctrl: IntegrationControl):
    def stop(t, y):
        env = abs(t) ** (1 / 3)
        u = abs(y[0])
        return u > ctrl.blowup * env or u < ctrl.zero_threshold * env
    return stop


def _vault_radius(tau, params, ctrl):
    dphidtau = abs(2 * asy.phi_of_tau(tau, params) / (3 * tau))
    return min(ctrl.vault_phi_radius / dphidtau, 0.25 * abs(tau))


def _circle_exit(center, radius, t0, direction):
    """Points where the line t0 + s*direction meets the circle |tau - center| = radius."""
    w = t0 - center
    # |w + s d|^2 = r^2, |d| = 1
    bq = (w * direction.conjugate()).real
    disc = bq * bq - (abs(w) ** 2 - radius ** 2)
    if disc < 0:
        return None
    r = math.sqrt(disc)
    return t0 + (-bq - r) * direction, t0 + (-bq + r) * direction


def _vault(history: list, t_end: complex, params, ctrl, state_proto):
    """Cross the singularity ahead of the last history state; returns (state, event)."""
    last = history[-1]
    big = abs(last.u) > 1
    center = last.tau - (2 if big else 1) * last.u / last.du
    rho = _vault_radius(center, params, ctrl)
    start = history[0].tau
    direction = (t_end - start) / abs(t_end - start)
    hit = _circle_exit(center, rho, start, direction)
    if hit is None:
        raise IntegrationError("vault geometry: path misses the estimated singularity", history[-20:])
    t_in, t_out = hit
    # re-enter from the last history state still outside the vault circle
    base = next((s for s in reversed(history) if abs(s.tau - center) >= rho), history[0])
    tmp: list = []
    _, y, _, h = _run(_segment(base.tau, t_in), base.vector(), base, params, ctrl, tmp)
    th_in = cmath.phase(t_in - center)
    th_out = cmath.phase(t_out - center)
    dth = (th_out - th_in) % (2 * math.pi)
    arc_samples: list = []
    entry = state_proto.with_values(t_in, y)
    _run(_arc(center, rho, th_in, th_in + dth), y, entry, params,
         IntegrationControl(**{**ctrl.to_dict(), "max_step": rho * 0.2}), arc_samples)
    arc_end = arc_samples[-1]
    pts = arc_samples[:: max(1, len(arc_samples) // 24)]
    fit: LocalFit = fit_local(params, [(s.tau, s.u, s.du) for s in pts], K=ctrl.fit_order)
    if fit.kind == "pole":
        ser = series_at_pole(fit.center, fit.free_param, params, ctrl.fit_order)
    else:
        sgn = 1 if fit.kind == "zero_plus" else -1
        ser = series_at_zero(fit.center, sgn, fit.free_param, params, ctrl.fit_order)
    u, du = ser.eval(t_out)
    mismatch = abs(u - arc_end.u) / max(1.0, abs(u))
    out = SolutionState(complex(t_out), complex(u), complex(du), arc_end.phi, params,
                        state_proto.gauge_tau)
    ev = TrajectoryEvent(fit.kind, complex(fit.center), complex(fit.free_param),
                         {"fit_residual": fit.residual, "ambiguous": fit.ambiguous,
                          "arc_mismatch": float(mismatch), "radius": float(rho),
                          "alternatives": dict(fit.residuals)})
    return out, ev, tmp + arc_samples


def integrate_path(path: _Path, initial: SolutionState, params: EquationParams,
                   ctrl: IntegrationControl = IntegrationControl()) -> list:
    """Integrate along an arbitrary parametrised path without vaulting."""
    out = [initial]
    _run(path, initial.vector(), initial, params, ctrl, out)
    return out


def integrate(path: Sequence[complex], initial: SolutionState, params: EquationParams,
              ctrl: IntegrationControl = IntegrationControl(), vault: bool = True) -> Trajectory:
    """Integrate through the waypoints ``path`` (starting at initial.tau)."""
    pts = [complex(initial.tau)] + [complex(p) for p in path]
    if abs(pts[0] - pts[1]) < 1e-300 and len(pts) > 1:
        pts = pts[1:]
    for t0, t1 in zip(pts, pts[1:]):
        if _segment_distance_to_origin(t0, t1) < ctrl.origin_exclusion:
            raise PreconditionError(
                f"segment {t0} -> {t1} enters the disk of radius {ctrl.origin_exclusion} around 0")
    samples = [initial]
    events: list = []
    waypoints = [initial]
    state = initial
    stop = _threshold(ctrl) if vault else None
    h = None
    for t1 in pts[1:]:
        while True:
            seg_out: list = [state]
            seg = _segment(state.tau, t1)
            s_end, y, stopped, h = _run(seg, state.vector(), state, params, ctrl, seg_out, stop, h)
            if not stopped:
                samples.extend(seg_out[1:])
                state = seg_out[-1]
                break
            try:
                new, ev, extra = _vault(seg_out, t1, params, ctrl, state)
            except (FitFailure, IntegrationError) as exc:
                raise IntegrationError(f"vault failed: {exc}", seg_out[-20:]) from exc
            # keep samples up to the vault entry; the arc samples are off-path
            cut = [s for s in seg_out[1:] if abs(s.tau - ev.center) >= ev.fitted_by["radius"]]
            samples.extend(cut)
            events.append(ev)
            state = new
            samples.append(state)
            if abs(state.tau - t1) < 1e-14 * max(1.0, abs(t1)) or \
                    ((t1 - state.tau) * (t1 - seg.tau(0)).conjugate()).real <= 0:
                # vault exit overshot the waypoint: integrate back to it
                back: list = [state]
                _run(_segment(state.tau, t1), state.vector(), state, params, ctrl, back)
                samples.extend(back[1:])
                state = back[-1]
                break
        waypoints.append(state)
    return Trajectory(samples, events, waypoints)


# --- seeding -------------------------------------------------------------------------

def seed_from_asymptotics(tau0, md: MonodromyData, params: EquationParams,
                          axis: str = "real", regime: str | None = None,
                          min_phi: float = 50.0,
                          domain: asy.DomainConfig = asy.DEFAULT_DOMAIN) -> SolutionState:
    """State at tau0 from the leading asymptotics; phi is gauged to 0 at tau0."""
    rot = cmath.exp(-0.5j * math.pi * params.eps1) if axis == "imag" else 1.0
    ph = complex(asy.phi_of_tau(tau0 * (rot if axis == "imag" else 1), params)
                 if axis == "imag" else asy.phi_of_tau(tau0 * _real_rot(params), params))
    if abs(ph) < min_phi:
        raise PreconditionError(f"|phi(tau0)| = {abs(ph):.3g} is below {min_phi}")
    try:
        v = asy.evaluate(tau0, md, params, axis=axis, regime=regime, domain=domain)
    except asy.NearSingularity as exc:
        raise asy.NearSingularity(
            f"{exc}; nearest safe tau: {_safe_tau(tau0, md, params, axis, regime, domain)}",
            exc.distance) from exc
    return SolutionState(complex(tau0), v.u, v.du, 0j, params, complex(tau0))


def _real_rot(params):
    return cmath.exp(-1j * math.pi * params.eps1)


def _safe_tau(tau0, md, params, axis, regime, domain):
    for k in range(1, 200):
        for sgn in (1, -1):
            t = tau0 * (1 + sgn * 0.002 * k)
            try:
                asy.evaluate(t, md, params, axis=axis, regime=regime, domain=domain)
                return t
            except asy.NearSingularity:
                continue
    return None


# --- singularity location --------------------------------------------------------------

@dataclass(frozen=True)
class HoleReport:
    m: int
    kind: str
    tau_predicted: complex
    tau_detected: complex | None
    detected_kind: str | None
    winding: float
    expected_winding: int
    events_inside: int

    @property
    def occupied_once(self) -> bool:
        return (self.events_inside == 1 and self.detected_kind == self.kind
                and round(self.winding) == self.expected_winding
                and abs(self.winding - round(self.winding)) < 0.05)


@dataclass
class LocateResult:
    holes: list
    trajectory: Trajectory
    tau0: complex

    def table(self) -> list:
        return [(h.m, h.detected_kind, h.tau_detected) for h in self.holes]

    @property
    def all_occupied_once(self) -> bool:
        return all(h.occupied_once for h in self.holes)


_EXPECTED_WINDING = {"pole": -2, "zero_plus": 1, "zero_minus": 1}


def _nearest_state(traj: Trajectory, tau: complex) -> SolutionState:
    return min(traj.samples, key=lambda s: abs(s.tau - tau))


def _approach_zero(state: SolutionState, params, ctrl, r: float, iters: int = 4):
    """Newton estimates of a nearby zero, never integrating closer than r to it."""
    z = state.tau - state.u / state.du
    for _ in range(iters):
        d = state.tau - z
        target = z + r * d / abs(d) if abs(d) > 0 else z + r
        state = integrate_path(_segment(state.tau, target), state, params, ctrl)[-1]
        z_new = state.tau - state.u / state.du
        done = abs(z_new - z) < 1e-3 * r
        z = z_new
        if done:
            break
    return state, z


def _winding(states) -> float:
    args = np.unwrap([cmath.phase(s.u) for s in states])
    return float((args[-1] - args[0]) / (2 * math.pi))


def locate_singularities(md: MonodromyData, params: EquationParams, m_range: Sequence[int],
                         reduction: bool | None = None, tau0: complex | None = None,
                         ctrl: IntegrationControl = IntegrationControl(),
                         domain: asy.DomainConfig = asy.DEFAULT_DOMAIN) -> LocateResult:
    """Integrate inward along the lattice ray and account for every predicted hole.

    Poles on the ray are met by the integrator and vaulted. Zeros sit off the
    ray; each is reached by a short excursion and pinned by Newton's method.
    Every hole is then encircled and the winding number of u counted.
    """
    ms = sorted(m_range)
    if reduction is None:
        reduction = asy.select_regime(md, params) == "reduction"
    regime = "reduction" if reduction else "half"
    ray = cmath.exp(1j * math.pi * params.eps1)
    lat = asy.lattice(md, params, ms, refine=True, reduction=reduction)
    if tau0 is None:
        tau0 = _phase_point(md, params, reduction, 2 * math.pi * (ms[-1] + 1) + math.pi / 2, ray)
    t_end = _phase_point(md, params, reduction, 2 * math.pi * ms[0] - 1.5 * math.pi, ray)
    seed = seed_from_asymptotics(tau0, md, params, regime=regime, domain=domain)
    traj = integrate([t_end], seed, params, ctrl)
    holes = []
    for q in lat:
        holes.append(_inspect_hole(q, traj, md, params, ctrl, domain, reduction, ray))
    return LocateResult(holes, traj, complex(tau0))


def _phase_point(md, params, reduction, x_target, ray):
    r1, _, const, _ = asy._lattice_scalars(md, params, False, reduction)
    ph = x_target
    for _ in range(60):
        ph = x_target - r1 * cmath.log(ph) - const
    # stay on the ray: keep only the real part of phi
    return complex(asy.tau_of_phi(ph.real, params, ray))


def _inspect_hole(q: asy.LatticePoint, traj: Trajectory, md, params, ctrl, domain,
                  reduction, ray) -> HoleReport:
    center_tau = q.tau_refined
    phi_c = complex(asy.phi_of_tau(center_tau / ray, params))
    r_hole = domain.C * abs(center_tau) ** (-domain.delta)
    inside = [e for e in traj.events
              if abs(complex(asy.phi_of_tau(e.center / ray, params)) - phi_c) < r_hole]
    detected = inside[0].center if inside else None
    kind = inside[0].kind if inside else None
    # start the contour from the ray point with the same phi real part
    start_phi = phi_c.real + r_hole if q.kind == "pole" else phi_c.real
    start = _nearest_state(traj, complex(asy.tau_of_phi(start_phi, params, ray)))
    if q.kind != "pole":
        # walk off the ray towards the predicted zero, then ring it and fit
        r_ring = 0.25 * r_hole / abs(2 * phi_c / (3 * center_tau))
        d = start.tau - center_tau
        near = center_tau + 2 * r_ring * d / abs(d)
        leg = integrate_path(_segment(start.tau, near), start, params, ctrl)
        st, z_est = _approach_zero(leg[-1], params, ctrl, r_ring)
        th = cmath.phase(st.tau - z_est)
        ring = integrate_path(_arc(z_est, abs(st.tau - z_est), th, th + 2 * math.pi), st,
                              params, ctrl)
        kind, z_tau = None, z_est
        try:
            fit = fit_local(params, [(x.tau, x.u, x.du) for x in ring[:: max(1, len(ring) // 16)]],
                            K=ctrl.fit_order)
            kind, z_tau = fit.kind, complex(fit.center)
        except FitFailure:
            pass
        in_hole = abs(complex(asy.phi_of_tau(z_tau / ray, params)) - phi_c) < r_hole
        detected = z_tau if in_hole else None
        inside = [z_tau] if in_hole else []
        z = ring[-1]
        # contour: from the zero to the hole boundary, then once around in the phi-plane
        th0 = cmath.phase(complex(asy.phi_of_tau(z.tau / ray, params)) - phi_c)
        if not in_hole:
            th0 = cmath.phase(complex(asy.phi_of_tau(start.tau / ray, params)) - phi_c)
            z = start
    else:
        th0 = 0.0
        z = start
    entry_tau = complex(asy.tau_of_phi(phi_c + r_hole * cmath.exp(1j * th0), params, ray))
    entry = integrate_path(_segment(z.tau, entry_tau), z, params, ctrl)[-1]
    loop = integrate_path(_phi_circle(phi_c, r_hole, params, ray, th0), entry, params,
                          IntegrationControl(**{**ctrl.to_dict(), "max_step": 0.05 * r_hole}))
    w = _winding(loop)
    return HoleReport(q.m, q.kind, q.tau_predicted, detected, kind, w,
                      _EXPECTED_WINDING[q.kind], len(inside))
