"""Batch front end: JSON config in, CSV/JSON out.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import asymptotics as asy
from . import linear as lin
from . import ode
from ._roots import as_complex
from .core import (EquationParams, MonodromyData, PreconditionError,
                   check_singular_imag_reduction, check_singular_real_reduction,
                   closed_form_point, sample_manifold_point, sample_singular_real,
                   sample_with_nu, validate_manifold)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

# --- schema ----------------------------------------------------------------------

_C = {"oneOf": [{"type": "number"},
                {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]}

_MD_EXPLICIT = {"type": "object", "additionalProperties": False,
                "required": ["a", "s00", "s0inf", "s1inf", "g11", "g12", "g21", "g22"],
                "properties": {k: _C for k in
                               ("a", "s00", "s0inf", "s1inf", "g11", "g12", "g21", "g22")}}
_MD_SAMPLE = {"type": "object", "additionalProperties": False, "required": ["sample"],
              "properties": {"sample": {
                  "type": "object", "additionalProperties": False, "required": ["kind"],
                  "properties": {
                      "kind": {"enum": ["manifold", "generic", "singular_real", "closed_form"]},
                      "seed": {"type": "integer"},
                      "nu_plus_1": _C,
                      "a": _C,
                      "g11": _C}}}}

_PARAMS = {"type": "object", "additionalProperties": False, "required": ["b"],
           "properties": {"a": _C, "b": {"type": "number"}, "epsilon": {"enum": [-1, 1]},
                          "eps1": {"enum": [-1, 0, 1]}, "eps2": {"enum": [-1, 0, 1]}}}

_DOMAIN = {"type": "object", "additionalProperties": False,
           "properties": {k: {"type": "number"} for k in
                          ("c1", "c2", "C", "delta", "guard", "half_tol")}}

_ODE_CTRL = {"type": "object", "additionalProperties": False,
             "properties": {k: {"type": "number"} for k in
                            ("tol", "max_step", "min_step", "max_steps", "blowup",
                             "zero_threshold", "vault_phi_radius", "origin_exclusion",
                             "fit_order")}}

_LIN_CTRL = {"type": "object", "additionalProperties": False,
             "properties": {k: {"type": ["number", "null"]} for k in
                            ("tol", "series_tol", "max_order", "min_exponent", "max_steps",
                             "meeting_radius")}}

_GRID = {"type": "object", "additionalProperties": False, "required": ["start", "stop", "num"],
         "properties": {"start": {"type": "number"}, "stop": {"type": "number"},
                        "num": {"type": "integer", "minimum": 1}}}

_BASE = {"monodromy": {"oneOf": [_MD_EXPLICIT, _MD_SAMPLE]}, "params": _PARAMS}


def _schema(required, **props):
    return {"type": "object", "additionalProperties": False,
            "required": ["command", "monodromy"] + list(required),
            "properties": {"command": {"type": "string"}, **_BASE, **props}}


SCHEMAS = {
    "validate": _schema([], tol={"type": "number", "exclusiveMinimum": 0}),
    "eval": _schema([], grid=_GRID, taus={"type": "array", "items": _C, "minItems": 1},
                    axis={"enum": ["real", "imag"]},
                    regime={"enum": ["generic", "half", "reduction"]}, domain=_DOMAIN),
    "lattice": _schema(["m_range"],
                       m_range={"type": "array", "items": {"type": "integer"},
                                "minItems": 2, "maxItems": 2},
                       kinds={"type": "array", "minItems": 1,
                              "items": {"enum": ["zero_minus", "pole", "zero_plus"]}},
                       imag={"type": "boolean"}, reduction={"type": "boolean"},
                       refine={"type": "boolean"}),
    "solve": _schema(["tau0", "path"], tau0={"type": "number"},
                     path={"type": "array", "items": _C, "minItems": 1}, ctrl=_ODE_CTRL),
    "direct-monodromy": _schema(["tau0"], tau0={"type": "number"}, tau=_C,
                                stokes={"type": "boolean"}, ctrl=_LIN_CTRL,
                                ode_ctrl=_ODE_CTRL),
    "roundtrip": _schema(["tau0"], tau0={"type": "number"}, inward_to={"type": "number"},
                         stokes={"type": "boolean"}, factor={"type": "number"},
                         ctrl=_LIN_CTRL, ode_ctrl=_ODE_CTRL),
}


class ConfigError(ValueError):
    pass


class InvariantViolation(RuntimeError):
    pass


def load_config(text: str, command: str) -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg.setdefault("command", command)
    if cfg["command"] != command:
        raise ConfigError(f"config is for '{cfg['command']}', not '{command}'")
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from exc
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _monodromy(spec: dict) -> MonodromyData:
    if "sample" not in spec:
        return MonodromyData.from_dict(spec)
    s = spec["sample"]
    rng = np.random.default_rng(s.get("seed", 0))
    a = as_complex(s["a"]) if "a" in s else None
    kind = s["kind"]
    if kind == "manifold":
        return sample_manifold_point(rng, a)
    if kind == "generic":
        if "nu_plus_1" not in s:
            raise ConfigError("sample kind 'generic' needs nu_plus_1")
        return sample_with_nu(rng, as_complex(s["nu_plus_1"]), a)
    if kind == "singular_real":
        return sample_singular_real(rng, None if a is None else a.real)
    if a is None or "g11" not in s:
        raise ConfigError("sample kind 'closed_form' needs a and g11")
    return closed_form_point(a.real, as_complex(s["g11"]))


def _params(cfg: dict, md: MonodromyData) -> EquationParams:
    p = dict(cfg.get("params", {"b": 1.0}))
    p.setdefault("a", [md.a.real, md.a.imag])
    p.setdefault("epsilon", 1)
    return EquationParams.from_dict(p)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DP3_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Order-preserving map, parallel over DP3_THREADS workers."""
    n = _threads()
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _c(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _fmt(x) -> str:
    return repr(float(x))


class Output:
    def __init__(self, out_dir: Path | None, quiet: bool, provenance: str):
        self.dir = out_dir
        self.quiet = quiet
        self.provenance = provenance
        self.written: list[Path] = []

    def say(self, line: str = ""):
        if not self.quiet:
            print(line)

    def _path(self, name: str) -> Path | None:
        if self.dir is None:
            return None
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def csv(self, name: str, header: list, rows: list):
        buf = io.StringIO()
        buf.write(f"# {self.provenance}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        self.text(name, buf.getvalue())

    def json(self, name: str, obj: dict):
        obj = {"provenance": self.provenance, **obj}
        self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def text(self, name: str, text: str):
        p = self._path(name)
        if p is None:
            if not self.quiet:
                sys.stdout.write(text)
            return
        p.write_text(text)
        self.written.append(p)


# --- commands ------------------------------------------------------------------------

def cmd_validate(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    tol = tol if tol is not None else cfg.get("tol", 1e-10)
    chk = validate_manifold(md, tol)
    real = check_singular_real_reduction(md)
    imag = check_singular_imag_reduction(md)
    out.say(f"{'equation':<10}{'residual':>14}")
    for k, r in enumerate(chk.residuals, 1):
        out.say(f"{k:<10}{r:>14.3e}")
    out.say(f"singular-real reduction: {real}; singular-imaginary reduction: {imag}")
    out.say("PASS" if chk.passed else "FAIL")
    out.json("validate.json", {"residuals": list(chk.residuals), "tol": tol,
                               "passed": chk.passed, "singular_real": real,
                               "singular_imag": imag, "monodromy": md.to_dict()})
    return EXIT_OK if chk.passed else EXIT_INVARIANT


def _grid(cfg) -> list:
    if "taus" in cfg:
        return [as_complex(t) for t in cfg["taus"]]
    g = cfg.get("grid")
    if g is None:
        raise ConfigError("eval needs 'grid' or 'taus'")
    return [complex(t) for t in np.linspace(g["start"], g["stop"], g["num"])]


def cmd_eval(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    p = _params(cfg, md)
    dom = asy.DomainConfig(**cfg.get("domain", {}))
    axis = cfg.get("axis", "real")
    regime = cfg.get("regime")

    def row(t):
        base = [_fmt(t.real), _fmt(t.imag)]
        try:
            v = asy.evaluate(t, md, p, axis=axis, regime=regime, domain=dom)
        except asy.NearSingularity:
            return base + [""] * 10 + ["", "hole"]
        except PreconditionError:
            return base + [""] * 10 + ["", "outside"]
        vals = [x for z in (v.u, v.du, v.H, v.f, v.phase) for x in (_fmt(z.real), _fmt(z.imag))]
        return base + vals + [v.regime, "ok"]
    rows = _pmap(row, _grid(cfg))
    header = ["tau_re", "tau_im", "u_re", "u_im", "du_re", "du_im", "H_re", "H_im",
              "f_re", "f_im", "phase_re", "phase_im", "regime", "status"]
    out.csv("eval.csv", header, rows)
    holes = sum(r[-1] == "hole" for r in rows)
    out.say(f"{len(rows)} points, {holes} inside excluded discs")
    return EXIT_OK


def cmd_lattice(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    p = _params(cfg, md)
    lo, hi = cfg["m_range"]
    kinds = tuple(cfg.get("kinds", ("zero_minus", "pole", "zero_plus")))
    refine = cfg.get("refine", True)
    kw = dict(kinds=kinds, imag=cfg.get("imag", False),
              reduction=cfg.get("reduction", False), refine=refine)
    pts = [q for chunk in _pmap(lambda m: asy.lattice(md, p, [m], **kw), range(lo, hi + 1))
           for q in chunk]
    rows = []
    for q in pts:
        r = q.tau_refined
        rows.append([q.m, q.kind, _fmt(q.tau_predicted.real), _fmt(q.tau_predicted.imag),
                     "" if r is None else _fmt(r.real), "" if r is None else _fmt(r.imag)])
    out.csv("lattice.csv", ["m", "kind", "tau_re", "tau_im", "tau_refined_re",
                            "tau_refined_im"], rows)
    out.say(f"{len(rows)} lattice points for m in [{lo}, {hi}]")
    return EXIT_OK


def _ode_ctrl(cfg, key="ctrl", tol=None) -> ode.IntegrationControl:
    d = dict(cfg.get(key, {}))
    for k in ("max_steps", "fit_order"):
        if k in d:
            d[k] = int(d[k])
    if tol is not None:
        d["tol"] = tol
    return ode.IntegrationControl(**d)


def _lin_ctrl(cfg) -> lin.LinearControl:
    d = {k: v for k, v in cfg.get("ctrl", {}).items() if v is not None}
    for k in ("max_order", "max_steps"):
        if k in d:
            d[k] = int(d[k])
    return lin.LinearControl(**d)


def _seed(md, p, tau0):
    try:
        return ode.seed_from_asymptotics(tau0, md, p)
    except asy.NearSingularity:
        t = ode._safe_tau(tau0, md, p, "real", None, asy.DEFAULT_DOMAIN)
        if t is None:
            raise
        return ode.seed_from_asymptotics(t, md, p)


def cmd_solve(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    p = _params(cfg, md)
    ctrl = _ode_ctrl(cfg, tol=tol)
    s = _seed(md, p, cfg["tau0"])
    traj = ode.integrate([as_complex(t) for t in cfg["path"]], s, p, ctrl)
    out.text("trajectory.csv", traj.to_csv(out.provenance))
    out.json("events.json", {"seed_tau": _c(s.tau), "ctrl": ctrl.to_dict(),
                             "events": [e.to_dict() for e in traj.events]})
    out.say(f"{len(traj.samples)} samples, {len(traj.events)} events")
    worst = max(abs(x.b_reconstructed() - p.b) for x in traj.samples)
    if worst > 1e-9 * max(1.0, abs(p.b)):
        raise InvariantViolation(f"b drifted by {worst:.3g} along the trajectory")
    return EXIT_OK


def _state_at(cfg, md, p):
    s = _seed(md, p, cfg["tau0"])
    target = cfg.get("tau")
    if target is None:
        return s
    return ode.integrate([as_complex(target)], s, p, _ode_ctrl(cfg, "ode_ctrl")).final


def cmd_monodromy(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    p = _params(cfg, md)
    state = _state_at(cfg, md, p)
    res = lin.connection_matrix(lin.build_frame(state, p), _lin_ctrl(cfg),
                                stokes=cfg.get("stokes", True))
    tol = 1e-8 if tol is None else tol
    d = res.to_dict()
    d["G_isomonodromic"] = [[_c(x) for x in row] for row in res.G_isomonodromic]
    d["nu_tilde_plus_1"] = _c(res.nu_tilde())
    out.json("monodromy.json", d)
    for k, v in sorted(res.residuals.items()):
        out.say(f"{k:<22}{v:>12.3e}")
    out.say(f"nu_tilde + 1 = {res.nu_tilde():.10g}")
    if res.max_residual() > tol:
        raise InvariantViolation(f"max residual {res.max_residual():.3g} exceeds {tol:g}")
    return EXIT_OK


def cmd_roundtrip(cfg: dict, out: Output, tol: float | None) -> int:
    md = _monodromy(cfg["monodromy"])
    p = _params(cfg, md)
    r = lin.roundtrip(md, p, cfg["tau0"], _lin_ctrl(cfg), stokes=cfg.get("stokes", False),
                      factor=cfg.get("factor", 5.0), inward_to=cfg.get("inward_to"),
                      ode_ctrl=_ode_ctrl(cfg, "ode_ctrl"))
    err, lim = r.error, r.tolerance
    rec = r.to_dict()
    if tol is not None:
        lim = rec["tolerance"] = tol
    rec["passed"] = err <= lim
    out.json("roundtrip.json", rec)
    out.say(f"|d(nu+1)| = {err:.4g}  tolerance = {lim:.4g}  {'PASS' if err <= lim else 'FAIL'}")
    return EXIT_OK if err <= lim else EXIT_INVARIANT


COMMANDS = {
    "validate": cmd_validate,
    "eval": cmd_eval,
    "lattice": cmd_lattice,
    "solve": cmd_solve,
    "direct-monodromy": cmd_monodromy,
    "roundtrip": cmd_roundtrip,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dp3", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file ('-' for stdin)")
        sp.add_argument("--out", type=Path, help="output directory (default: stdout)")
        sp.add_argument("--tol", type=float, help="override the command's check tolerance")
        sp.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = sys.stdin.read() if args.config == "-" else Path(args.config).read_text()
        cfg = load_config(text, args.command)
        prov = f"dp3 {__version__} {args.command} config-sha256={config_hash(cfg)}"
        out = Output(args.out, args.quiet, prov)
        return COMMANDS[args.command](cfg, out, args.tol)
    except (asy.NearSingularity, lin.TruncationError, lin.SingularFrame,
            ode.IntegrationError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except InvariantViolation as exc:
        return _fail(EXIT_INVARIANT, exc)
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_CONFIG, exc)


def _fail(code: int, exc: Exception) -> int:
    print(f"dp3: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
