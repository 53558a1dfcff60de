"""Command-line experiment runner.

    subvarlap <command> --config FILE [--out DIR] [--seed N] [--refine K]

The config is a text file of `key = value` lines (`#` starts a comment).
Expressions may use x, y, t (Heisenberg) or x, y, z (Euclidean), the
constants pi and e, + - * / **, and abs sin cos exp sqrt log pow min max step.

Exit status: 0 on success, 2 when a precondition gate fails, 1 on any other
error (including config errors, reported as LINE:COL).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from contextlib import nullcontext
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .errors import GateFailure, SubvarlapError
from .expr import ExpressionError, coordinate_names, parse_expression
from .geometry import BallFamily, CarnotGroup, GridDomain, ball_measure, quasi_triangle_constant
from .lebesgue import exponent_bounds, jump_condition_check, log_holder_check, luxemburg_norm, modular
from .muckenhoupt import apq_constant_estimate, classify_growth
from .operators import (
    MaximalOperator,
    fractional_integral,
    operator_norm_estimate,
    probe_family,
    rubio_de_francia,
    sawyer_wheeden_check,
)
from .plaplacian import DirichletProblem, EllipticityField, solve_dirichlet, weak_residual
from .poincare import (
    TestFunctionFamily,
    domain_mean,
    level_truncation,
    refinement_sweep,
    representation_check,
)

COMMANDS = (
    "geometry", "norm", "apq", "maximal", "fracint", "rdf",
    "swcheck", "poincare", "truncate", "represent", "solve",
)
EXPRESSION_KEYS = {"exponent", "weight", "function", "source", "q", "target_weight", "source_weight"}
SCALAR_KEYS = {
    "group": str, "bounds": str, "resolution": str, "nodal": "bool", "seed": int,
    "alpha": float, "stride": int, "enrich": int, "count": int, "family": str,
    "inequality": str, "order": int, "level": float, "j": int, "terms": int,
    "tol": float, "max_iter": int, "anisotropic": "bool", "probes": int, "delta": float,
    "radii_per_octave": int,
}
MIN_RESOLUTION = 8


class ConfigError(SubvarlapError):
    def __init__(self, message, line, col=1):
        super().__init__(f"{line}:{col}: {message}")


def _version():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def parse_config(text):
    """key = value lines -> {key: (raw value, line, column of the value)}."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", ln, len(line) - len(line.lstrip()) + 1)
        key, value = line.split("=", 1)
        k = key.strip()
        if k not in SCALAR_KEYS and k not in EXPRESSION_KEYS:
            raise ConfigError(f"unknown key {k!r}", ln, len(key) - len(key.lstrip()) + 1)
        if k in out:
            raise ConfigError(f"duplicate key {k!r}", ln, 1)
        col = len(key) + 2 + len(value) - len(value.lstrip())
        out[k] = (value.strip(), ln, col)
    return out


class Setup:
    """Parsed config: group, domain and expression fields."""

    def __init__(self, cfg, refine=0, seed=None):
        self.cfg = cfg
        self.g = CarnotGroup.from_id(self.get("group", "r2"))
        self.seed = seed if seed is not None else self.get("seed", 0)
        self.dom = self._domain(refine)
        self.names = coordinate_names(self.g.dim, self.g.kind == "heisenberg")

    def get(self, key, default=None):
        if key not in self.cfg:
            return default
        raw, ln, col = self.cfg[key]
        kind = SCALAR_KEYS[key]
        try:
            if kind == "bool":
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "1", "yes")
            return kind(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for {key}", ln, col) from None

    def _domain(self, refine):
        raw, ln, col = self.cfg.get("bounds", (None, 0, 1))
        d = self.g.dim
        if raw is None:
            bounds = [(-1.0, 1.0)] * d if self.g.kind == "heisenberg" else [(0.0, 1.0)] * d
        else:
            try:
                bounds = [tuple(float(v) for v in part.split()) for part in raw.split(",")]
            except ValueError:
                raise ConfigError("bounds must be 'lo hi, lo hi, ...'", ln, col) from None
            if len(bounds) != d or any(len(b) != 2 for b in bounds):
                raise ConfigError(f"bounds need {d} 'lo hi' pairs", ln, col)
        raw, ln, col = self.cfg.get("resolution", ("32", 0, 1))
        try:
            res = [int(v) for v in raw.split()]
        except ValueError:
            raise ConfigError("resolution must be integers", ln, col) from None
        if len(res) == 1:
            res = res * d
        if len(res) != d:
            raise ConfigError(f"resolution needs 1 or {d} integers", ln, col)
        if min(res) < MIN_RESOLUTION:
            raise ConfigError(f"resolution must be at least {MIN_RESOLUTION} per axis", ln, col)
        res = [n * 2**refine for n in res]
        try:
            if self.get("nodal", False):
                return GridDomain.nodal(bounds, res)
            return GridDomain(tuple(bounds), tuple(res))
        except SubvarlapError as exc:
            raise ConfigError(str(exc), ln, col) from None

    def expression(self, key, default=None):
        if key not in self.cfg:
            if default is None:
                raise ConfigError(f"missing key {key!r}", 0, 1)
            return parse_expression(default, self.names)
        raw, ln, col = self.cfg[key]
        return parse_expression(raw, self.names, line=ln, col=col - 1)

    def field(self, key, default=None, dom=None):
        return self.expression(key, default)((dom or self.dom).points)

    def scalar_expression(self, key, default=None):
        vals = self.field(key, default)
        if np.ptp(vals) > 0:
            raise ConfigError(f"{key} must be constant here", self.cfg[key][1], self.cfg[key][2])
        return float(vals.flat[0])


def _fmt(v):
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")


def write_grid(path, s, values, name="value"):
    pts = s.dom.points.reshape(-1, s.dom.ndim)
    vals = np.asarray(values, dtype=float).reshape(-1)
    write_csv(path, list(s.names) + [name], (list(p) + [v] for p, v in zip(pts, vals)))


# -- subcommands ------------------------------------------------------------


def cmd_geometry(s, out, args):
    g, dom = s.g, s.dom
    rng = np.random.default_rng(s.seed)
    lo = np.array([b[0] for b in dom.bounds])
    hi = np.array([b[1] for b in dom.bounds])
    tri = [lo + (hi - lo) * rng.random((10_000, g.dim)) for _ in range(3)]
    K = quasi_triangle_constant(g, *tri)
    c = dom.center
    r_max = 0.25 * float(np.min(hi - lo))
    rows = []
    r = r_max / 8
    while r <= r_max * (1 + 1e-12):
        m1 = ball_measure(c, r, g, dom)
        m2 = ball_measure(c, 2 * r, g, dom)
        rows.append([r, m1, float(g.ball_volume(r)), m2 / m1 if m1 > 0 else float("nan")])
        r *= 2
    write_csv(out / "geometry.csv", ["radius", "measure", "exact", "doubling"], rows)
    return {"Q": g.Q, "quasi_triangle_K": K}


def cmd_norm(s, out, args):
    p = s.field("exponent", "2")
    w = s.field("weight", "1")
    f = s.field("function")
    dx = s.dom.cell_measure
    pm, pp = exponent_bounds(p)
    lh = log_holder_check(p, s.dom, s.g, seed=s.seed)
    rows = [
        ["modular", modular(f, p, w, dx)],
        ["luxemburg", luxemburg_norm(f, p, w, dx)],
        ["p_minus", pm],
        ["p_plus", pp],
        ["log_holder_constant", lh.constant],
    ]
    if "delta" in s.cfg:
        jc = jump_condition_check(p, s.dom, s.g, s.get("delta"))
        rows.append(["jump_condition", float(jc.holds)])
    write_csv(out / "norm.csv", ["quantity", "value"], rows)
    return {r[0]: r[1] for r in rows}


def cmd_apq(s, out, args):
    w = s.field("weight")
    p = s.field("exponent", "2")
    q = s.field("q", None) if "q" in s.cfg else p
    fam = BallFamily.dyadic(s.dom, s.g, stride=s.get("stride", 1))
    est = [apq_constant_estimate(w, p, q, fam, s.dom, s.g)]
    for _ in range(s.get("enrich", 2)):
        fam = fam.enrich(s.dom, s.g)
        est.append(apq_constant_estimate(w, p, q, fam, s.dom, s.g))
    vals = [e.constant for e in est]
    rows = [[k, e.radius, e.constant] for k, e in enumerate(est)]
    write_csv(out / "apq.csv", ["enrichment", "radius", "estimate"], rows)
    verdict = classify_growth(vals) if len(vals) >= 3 else "inconclusive"
    return {"estimates": vals, "verdict": verdict, "gamma": est[0].gamma}


def _maximal(s):
    dens = s.field("weight", "1")
    return MaximalOperator(s.dom, s.g, density=dens)


def cmd_maximal(s, out, args):
    f = s.field("function")
    write_grid(out / "maximal.csv", s, _maximal(s)(f))
    return {}


def cmd_fracint(s, out, args):
    f = s.field("function")
    alpha = s.get("alpha", 1.0)
    write_grid(out / "fracint.csv", s, fractional_integral(f, alpha, s.dom, s.g))
    return {"alpha": alpha}


def cmd_rdf(s, out, args):
    h = s.field("function")
    p = s.field("exponent", "2")
    dens = s.field("weight", "1")
    M = _maximal(s)
    dx = s.dom.cell_measure * dens
    probes = probe_family(s.dom, s.get("probes", 12), s.seed)
    est = operator_norm_estimate(M, probes, p, dx=dx, clamp_at_one=True)
    res = rubio_de_francia(h, p, M, est, dx=s.dom.cell_measure, density=dens, K_terms=s.get("terms", 30))
    write_grid(out / "rdf.csv", s, res.values)
    return {
        "norm_M_estimate": est.value,
        "terms": res.terms,
        "last_term_norm": res.last_term_norm,
        "truncation_certificate": res.truncation_certificate,
    }


def cmd_swcheck(s, out, args):
    p = s.scalar_expression("exponent")
    q = s.scalar_expression("q")
    wt = s.field("target_weight", "1")
    vs = s.field("source_weight", "1")
    alpha = s.get("alpha", 1.0)
    r_min = 2 * s.g.min_separation(s.dom.spacing)
    fam = BallFamily.dyadic(s.dom, s.g, stride=s.get("stride", 4), r_min=r_min)
    res = sawyer_wheeden_check(wt, vs, p, q, alpha, fam, s.dom, s.g, seed=s.seed)
    centers = fam.centers(s.dom)
    rows = [list(c) + [r, v] for c, r, v in zip(centers, fam.radii, res.per_ball)]
    write_csv(out / "swcheck.csv", list(s.names) + ["radius", "value"], rows)
    return {"value": res.value, "skipped": res.skipped}


def cmd_poincare(s, out, args):
    ineq = args.inequality or s.get("inequality", "prin")
    if args.mode:
        ineq = {"mean": "prin", "zero": "poincare"}[args.mode] if ineq != "poincare2" else ineq
    order = args.order or s.get("order", 1)
    family = TestFunctionFamily(
        args.family or s.get("family", "trig"),
        args.count or s.get("count", 32),
        s.seed,
        zero_boundary=ineq != "prin",
    )
    p_expr = s.expression("exponent", "2")
    w_expr = s.expression("weight", "1")
    kw = {"order": order} if ineq == "poincare" else {}
    if "delta" in s.cfg:
        kw["jump_delta"] = s.get("delta")
    reports, factor = refinement_sweep(
        family, s.dom, s.g, p_expr, w_expr, ineq, refinements=args.refine, **kw
    )
    last = reports[-1]
    rows = [
        [str(i), r, a, b] for i, (r, a, b) in enumerate(zip(last.ratios, last.numerators, last.denominators))
    ]
    rows.append(["max", last.max, float("nan"), float("nan")])
    write_csv(out / "poincare.csv", ["id", "ratio", "numerator", "denominator"], rows)
    return {
        "inequality": ineq,
        "maxima": [r.max for r in reports],
        "resolutions": [list(r.resolution) for r in reports],
        "refinement_factor": factor,
        "gates": {k: (v if isinstance(v, bool) else v["verdict"]) for k, v in last.gates.items()},
    }


def cmd_truncate(s, out, args):
    f = s.field("function")
    c = s.get("level", None)
    c = domain_mean(f, s.dom) if c is None else c
    write_grid(out / "truncate.csv", s, level_truncation(f, c, s.get("j", 0)))
    return {"level": c}


def cmd_represent(s, out, args):
    f = s.field("function")
    res = representation_check(f, s.dom, s.g)
    write_csv(out / "represent.csv", ["quantity", "value"], [["constant", res.constant], ["mean_B0", res.mean_B0]])
    return {"constant": res.constant, "status": res.status, "B0_radius": res.ball[1]}


def cmd_solve(s, out, args):
    dom, g = s.dom, s.g
    p = s.field("exponent", "2")
    w = s.field("weight", "1")
    f = s.field("source", "1")
    A = EllipticityField.anisotropic(w, g.n1) if s.get("anisotropic", False) else EllipticityField.isotropic(w, g.n1)
    prob = DirichletProblem(dom, g, p, w, A, f, tol=s.get("tol", 1e-8), max_iter=s.get("max_iter", 100_000))
    sol = solve_dirichlet(prob)
    write_grid(out / "solution.csv", s, sol.u, "u")
    write_csv(
        out / "energy_trace.csv",
        ["iteration", "eps", "energy"],
        ([k, e, v] for k, (e, v) in enumerate(zip(sol.eps_trace, sol.energy_trace))),
    )
    diag = {
        "status": sol.status,
        "iterations": sol.iterations,
        "grad_norm": sol.grad_norm,
        "eps_exit": sol.eps,
        "eps_schedule": list(prob.eps_schedule),
        "stages": sol.stages,
        "weak_residual": weak_residual(sol.u, prob, 20, eps=sol.eps, seed=s.seed),
        **{k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in prob.diagnostics.items()},
    }
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True, default=_json_default) + "\n")
    return {"status": sol.status, "iterations": sol.iterations}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def build_parser():
    ap = argparse.ArgumentParser(prog="subvarlap", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=Path("out"))
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--refine", type=int, default=None)
        if name == "poincare":
            sp.add_argument("--mode", choices=("mean", "zero"))
            sp.add_argument("--inequality", choices=("prin", "poincare", "poincare2"))
            sp.add_argument("--order", type=int, choices=(1, 2))
            sp.add_argument("--family", choices=("bumps", "poly", "trig", "tents"))
            sp.add_argument("--count", type=int)
    return ap


def _thread_limit():
    n = os.environ.get("SUBVARLAP_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def run(argv=None):
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        text = args.config.read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
        if args.command == "poincare":
            grid_refine = 0
            args.refine = 1 if args.refine is None else args.refine
        else:
            grid_refine = args.refine or 0
        setup = Setup(cfg, grid_refine, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        with _thread_limit():
            summary = HANDLERS[args.command](setup, args.out, args)
    except GateFailure as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ExpressionError) as exc:
        print(f"{args.config}:{exc}", file=sys.stderr)
        return 1
    except (SubvarlapError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    artifacts = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(args.out.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "command": args.command,
        "version": _version(),
        "config": text,
        "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "seed": setup.seed,
        "refine": args.refine,
        "resolution": list(setup.dom.shape),
        "summary": summary,
        "artifacts": artifacts,
        "wall_time_s": time.perf_counter() - t0,
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return 0


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
