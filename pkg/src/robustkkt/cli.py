"""Problem-file ingestion, command dispatch and report emission.

Problem files are flat sectioned text: ``[section]`` headers and
``key = value`` lines, expressions quoted verbatim.  Reports are JSON on
stdout and byte-deterministic for fixed inputs (timings only with
``--timings``).  Exit codes: 0 affirmative verdict, 1 negative or
counterexample, 2 inconclusive, 3 usage or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
import time
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import certify, verify
from .certify import KKTCertificate, check_cq, check_kkt, fuzzy_kkt_demo, \
    pseudoconvex_test, search_kkt
from .funcdsl import ExprError, contains_uncertainty, parse_expr
from .robustfeas import (
    ProblemError,
    ProblemSpec,
    UncertainConstraint,
    FixtureSet,
    compute_active_sets,
    is_feasible,
    raster,
)
from .setcalc import ConeSpec, OmegaSpec, Polytope, PolytopeSet, SetCalcError
from .subdiff import limiting_subdiff, sup_rule
from .verify import DualTriple, classify_point, converse_duality_check, \
    generate_feasible_samples, strong_duality_from, weak_duality_check

REPORT_VERSION = 1


class LoadError(Exception):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)
        self.line = line


def parse_scalar(text: str) -> float:
    """Numeric literal: fraction, decimal, or a constant expression."""
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        pass
    try:
        from .funcdsl import eval_expr
        return eval_expr(parse_expr(text, 0), [])
    except ExprError as exc:
        raise LoadError(f"bad numeric literal {text!r}: {exc}")


def parse_vector(text: str) -> np.ndarray:
    return np.array([parse_scalar(t) for t in text.split(",") if t.strip()])


# ---------------------------------------------------------------------------
# Problem files
# ---------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\[([a-zA-Z_][\w ]*)\]$")
_CONSTRAINT_RE = re.compile(
    r'^"(?P<expr>.*)"(?:\s+with\s+v\s+in\s+(?P<dom>.+))?$')
_FIXTURE_RE = re.compile(
    r"^(?P<name>\w+)\s*@\s*(?P<pt>[^:]+):\s*(?P<sets>.+)$")


def _strip_comment(line: str) -> str:
    out = []
    in_quote = False
    for ch in line:
        if ch == '"':
            in_quote = not in_quote
        if ch == "#" and not in_quote:
            break
        out.append(ch)
    return "".join(out).rstrip()


def _parse_point(text: str) -> np.ndarray:
    return parse_vector(text)


def _parse_polytope_set(text: str, lineno: int) -> PolytopeSet:
    comps = []
    for chunk in text.split("|"):
        chunk = chunk.strip()
        if not (chunk.startswith("{") and chunk.endswith("}")):
            raise LoadError("fixture component must be {(..), (..)}", lineno)
        body = chunk[1:-1].strip()
        verts = []
        for m in re.finditer(r"\(([^()]*)\)", body):
            verts.append([parse_scalar(t) for t in m.group(1).split(",")])
        if not verts:
            raise LoadError("fixture component has no vertices", lineno)
        comps.append(Polytope(np.array(verts)))
    return PolytopeSet(comps)


def load_problem(path) -> ProblemSpec:
    """Parse and validate a .problem file into a ProblemSpec."""
    path = resolve_problem_path(path)
    text = Path(path).read_text()
    sections: dict[str, list[tuple[int, str, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            current = m.group(1).strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise LoadError("content before first [section]", lineno)
        if "=" not in line:
            raise LoadError("expected key = value", lineno)
        key, val = line.split("=", 1)
        sections[current].append((lineno, key.strip(), val.strip()))

    def single(section: str, key: str, default=None):
        for _, k, v in sections.get(section, []):
            if k == key:
                return v
        if default is None:
            raise LoadError(f"missing key {key!r} in [{section}]")
        return default

    dim = int(single("space", "dim"))

    pattern = []
    for tok in single("cone", "pattern").split(","):
        tok = tok.strip()
        if tok == ">=0":
            pattern.append(1)
        elif tok == "<=0":
            pattern.append(-1)
        else:
            raise LoadError(f"cone pattern entry must be >=0 or <=0, got {tok!r}")
    cone = ConeSpec(pattern=tuple(pattern))

    theta = parse_vector(single("theta", "value"))

    okind = single("omega", "kind", "whole").lower()
    if okind == "whole":
        omega = OmegaSpec.whole(dim)
    elif okind == "box":
        lo, hi = [], []
        for tok in single("omega", "bounds").split(","):
            a, b = tok.split("..")
            lo.append(-np.inf if a.strip() == "-inf" else parse_scalar(a))
            hi.append(np.inf if b.strip() == "inf" else parse_scalar(b))
        omega = OmegaSpec.box(lo, hi)
    elif okind == "halfspaces":
        normals, offsets = [], []
        for lineno, k, v in sections.get("omega", []):
            if not k.startswith("h"):
                continue
            try:
                lhs, rhs = v.split(":")
                normals.append([parse_scalar(t) for t in lhs.split(",")])
                offsets.append(parse_scalar(rhs))
            except ValueError:
                raise LoadError("halfspace must be 'a1,a2 : b'", lineno)
        if not normals:
            raise LoadError("halfspaces omega needs h* entries")
        omega = OmegaSpec.halfspaces(normals, offsets)
    else:
        raise LoadError(f"unknown omega kind {okind!r}")

    obj_names, objs = [], []
    for lineno, k, v in sections.get("objectives", []):
        m = _CONSTRAINT_RE.match(v)
        if not m or m.group("dom"):
            raise LoadError("objective must be a quoted expression", lineno)
        try:
            expr = parse_expr(m.group("expr"), dim)
        except ExprError as exc:
            raise LoadError(f"objective {k}: {exc}", lineno)
        if contains_uncertainty(expr):
            raise LoadError(f"objective {k} must not use v", lineno)
        obj_names.append(k)
        objs.append(expr)
    if not objs:
        raise LoadError("at least one objective is required")

    constraints = []
    for lineno, k, v in sections.get("constraints", []):
        m = _CONSTRAINT_RE.match(v)
        if not m:
            raise LoadError("constraint must be a quoted expression", lineno)
        try:
            expr = parse_expr(m.group("expr"), dim)
        except ExprError as exc:
            raise LoadError(f"constraint {k}: {exc}", lineno)
        dom = m.group("dom")
        lo = hi = None
        scenarios = None
        if dom is not None:
            dom = dom.strip()
            if dom.startswith("[") and dom.endswith("]"):
                a, b = dom[1:-1].split(",")
                lo, hi = parse_scalar(a), parse_scalar(b)
            elif dom.startswith("{") and dom.endswith("}"):
                scenarios = tuple(parse_scalar(t)
                                  for t in dom[1:-1].split(","))
            else:
                raise LoadError("scenario domain must be [lo, hi] or {..}",
                                lineno)
        elif contains_uncertainty(expr):
            raise LoadError(f"constraint {k} uses v but has no domain", lineno)
        try:
            constraints.append(UncertainConstraint(k, expr, lo, hi, scenarios))
        except ProblemError as exc:
            raise LoadError(str(exc), lineno)

    opts = {k: (lineno, v) for lineno, k, v in sections.get("options", [])
            if k != "fixture"}
    fixtures = []
    declared = set(obj_names) | {c.name for c in constraints}
    for lineno, k, v in sections.get("options", []):
        if k != "fixture":
            continue
        m = _FIXTURE_RE.match(v)
        if not m:
            raise LoadError("fixture must be 'name @ point : {..} | {..}'",
                            lineno)
        name = m.group("name")
        if name not in declared:
            raise LoadError(f"fixture references undeclared function {name!r}",
                            lineno)
        fixtures.append(FixtureSet(name, _parse_point(m.group("pt")),
                                   _parse_polytope_set(m.group("sets"), lineno)))

    def opt(key, cast, default):
        if key in opts:
            return cast(opts[key][1])
        return default

    try:
        return ProblemSpec(
            dim=dim,
            objective_names=tuple(obj_names),
            objectives=tuple(objs),
            constraints=tuple(constraints),
            cone=cone,
            omega=omega,
            theta=theta,
            norm=opt("norm", str, "l2"),
            ball_facets=opt("ball_facets", int, 64),
            feas_tol=opt("feas_tol", float, 1e-8),
            kink_tol=opt("kink_tol", float, 1e-9),
            vgrid=opt("vgrid", int, 1001),
            seed=opt("seed", int, 20240601),
            fixtures=tuple(fixtures),
        )
    except (ProblemError, SetCalcError) as exc:
        raise LoadError(str(exc))


def resolve_problem_path(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.name.endswith(".problem") else p.name + ".problem"
    bundled = resources.files("robustkkt") / "fixtures" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise LoadError(f"problem file not found: {path}")


def load_certificate(path, spec: ProblemSpec) -> KKTCertificate:
    doc = json.loads(Path(path).read_text())

    def vec(key, length):
        vals = doc[key]
        if len(vals) != length:
            raise LoadError(f"certificate field {key} has wrong length")
        return np.array([parse_scalar(str(t)) for t in vals])

    p, n, d = spec.n_objectives, spec.n_constraints, spec.dim
    return KKTCertificate(
        ystar=vec("ystar", p),
        mu=vec("mu", n),
        u=[np.array([parse_scalar(str(t)) for t in row]) for row in doc["u"]],
        v=[np.array([parse_scalar(str(t)) for t in row]) for row in doc["v"]],
        vbar=[parse_scalar(str(t)) for t in doc.get("vbar", [0] * n)],
        bstar=vec("bstar", d),
        astar=vec("astar", d),
    )


def load_triple(path) -> DualTriple:
    doc = json.loads(Path(path).read_text())
    return DualTriple(
        z=np.array([parse_scalar(str(t)) for t in doc["z"]]),
        ystar=np.array([parse_scalar(str(t)) for t in doc["ystar"]]),
        mu=np.array([parse_scalar(str(t)) for t in doc["mu"]]),
    )


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------

def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [to_jsonable(t) for t in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Polytope):
        return {"vertices": obj.vertices.tolist()}
    if isinstance(obj, PolytopeSet):
        return {"components": [c.vertices.tolist() for c in obj.components]}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(t) for t in obj]
    if hasattr(obj, "__dict__") and not isinstance(obj, type):
        return {k: to_jsonable(v) for k, v in vars(obj).items()}
    return obj


def emit_report(command: str, problem_path, spec_hash: str, config: dict,
                verdict: str, details: dict, timings: float | None) -> None:
    doc = {
        "report_version": REPORT_VERSION,
        "command": command,
        "problem": {"path": str(problem_path), "sha256": spec_hash},
        "config": to_jsonable(config),
        "verdict": verdict,
        "details": to_jsonable(details),
    }
    if timings is not None:
        doc["timings_sec"] = timings
    print(json.dumps(doc, indent=2, sort_keys=True))


def _hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="robustkkt",
        description="Verification toolkit for nonsmooth robust "
                    "multiobjective optimization")
    ap.add_argument("--timings", action="store_true",
                    help="include wall-clock timing in the report "
                         "(off by default to keep reports byte-deterministic)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", required=True)
        p.add_argument("--fixtures", action="store_true",
                       help="use problem-file fixture sets where declared")
        p.add_argument("--mode", choices=("limiting", "hull"),
                       default=None)

    p = sub.add_parser("feasible", help="robust feasibility of a point")
    common(p)
    p.add_argument("--at", required=True)
    p.add_argument("--tol", type=float, default=None)

    p = sub.add_parser("raster", help="feasibility raster to CSV")
    common(p)
    p.add_argument("--region", required=True)
    p.add_argument("--res", type=int, default=401)
    p.add_argument("--out", default=None)

    p = sub.add_parser("subdiff", help="subdifferential set of one function")
    common(p)
    p.add_argument("--target", required=True)
    p.add_argument("--at", required=True)
    p.add_argument("--scenario", default=None)

    p = sub.add_parser("cq", help="constraint qualification at a point")
    common(p)
    p.add_argument("--at", required=True)

    p = sub.add_parser("kkt", help="KKT certificate check or search")
    common(p)
    p.add_argument("action", choices=("check", "search"))
    p.add_argument("--at", required=True)
    p.add_argument("--cert", default=None)
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("fuzzy", help="fuzzy necessary-condition demonstrator")
    common(p)
    p.add_argument("--at", required=True)
    p.add_argument("--ystar", required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--grid-n", type=int, default=81)

    p = sub.add_parser("pseudoconvex", help="type I/II pseudo-convexity test")
    common(p)
    p.add_argument("--at", required=True)
    p.add_argument("--type", dest="ptype", choices=("I", "II"), required=True)
    p.add_argument("--region", default=None)
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--y-res", type=int, default=24)
    p.add_argument("--witness", default=None)

    p = sub.add_parser("efficiency", help="classify a candidate point")
    common(p)
    p.add_argument("--at", required=True)
    p.add_argument("--kind", choices=verify.KINDS, required=True)
    p.add_argument("--region", required=True)
    p.add_argument("--res", type=int, default=401)

    p = sub.add_parser("duality", help="Mond-Weir duality checks")
    common(p)
    p.add_argument("action", choices=("weak", "strong", "converse"))
    p.add_argument("--at", default=None)
    p.add_argument("--kind", choices=("I", "II"), default="I")
    p.add_argument("--triple", default=None)
    p.add_argument("--triples", default=None)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--region", default=None)
    p.add_argument("--res", type=int, default=401)
    return ap


_VALUE_FLAGS = {"--region", "--at", "--ystar", "--scenario"}


def _merge_negative_values(argv):
    """Join value flags with leading-dash payloads ('--region -5,1,..')."""
    out = []
    skip = False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        if tok in _VALUE_FLAGS and i + 1 < len(argv) and re.match(
                r"^-[\d.]", argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            skip = True
        else:
            out.append(tok)
    return out


def run_command(argv) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(_merge_negative_values(argv))
    except SystemExit as exc:
        return 3 if exc.code not in (0, None) else 0
    t0 = time.monotonic()
    try:
        code, verdict, details, config = _dispatch(args)
    except (LoadError, ProblemError, ExprError, SetCalcError,
            certify.CertifyError, verify.VerifyError, OSError,
            json.JSONDecodeError, ValueError) as exc:
        print(json.dumps({"report_version": REPORT_VERSION,
                          "error": str(exc)}, indent=2, sort_keys=True))
        return 3
    timings = time.monotonic() - t0 if args.timings else None
    path = resolve_problem_path(args.problem)
    emit_report(args.command, path, _hash_file(path), config, verdict,
                details, timings)
    return code


def _dispatch(args) -> tuple[int, str, dict, dict]:
    spec = load_problem(args.problem)
    mode = args.mode or "limiting"
    use_fx = bool(args.fixtures)
    config = {"mode": mode, "fixtures": use_fx}

    if args.command == "feasible":
        x = parse_vector(args.at)
        acts = compute_active_sets(spec, x) if spec.constraints else None
        ok = is_feasible(spec, x, args.tol)
        details = {"point": x, "feasible": ok}
        if acts:
            details["phi"] = acts.phi
            details["phi_i"] = acts.phis
        return (0 if ok else 1), ("FEASIBLE" if ok else "INFEASIBLE"), \
            details, config

    if args.command == "raster":
        region = parse_vector(args.region)
        r = raster(spec, region, args.res)
        csv_text = r.to_csv()
        details = {"region": region, "res": args.res,
                   "feasible_cells": int(np.sum(r.feasible)),
                   "total_cells": int(r.feasible.size)}
        if args.out:
            Path(args.out).write_text(csv_text)
            details["out"] = args.out
        else:
            details["csv"] = csv_text
        return 0, "RASTER-WRITTEN", details, config

    if args.command == "subdiff":
        x = parse_vector(args.at)
        smode = args.mode or "hull"
        config["mode"] = smode
        name = args.target
        fx = spec.fixture_for(name, x) if use_fx else None
        if fx is not None:
            return 0, "SET-COMPUTED", {"target": name, "set": fx,
                                       "provenance": "fixture"}, config
        if name in spec.objective_names:
            res = limiting_subdiff(spec.objective(name), x, None, smode,
                                   spec.kink_tol)
        else:
            con = spec.constraint(name)
            if con.has_uncertainty:
                scen = args.scenario
                if scen is not None:
                    res = limiting_subdiff(con.expr, x, parse_scalar(scen),
                                           smode, spec.kink_tol)
                else:
                    V = con.scenarios if con.scenarios is not None \
                        else (con.lo, con.hi)
                    res = sup_rule(con.expr, x, V, mode=smode,
                                   kink_tol=spec.kink_tol, vgrid=spec.vgrid)
            else:
                res = limiting_subdiff(con.expr, x, None, smode, spec.kink_tol)
        details = {"target": name, "set": res.set, "exactness": res.exactness,
                   "rules": list(res.rules), "provenance": "engine"}
        return 0, "SET-COMPUTED", details, config

    if args.command == "cq":
        x = parse_vector(args.at)
        rep = check_cq(spec, x, use_fixtures=use_fx)
        verdict = "CQ-HOLDS" if rep.holds else "CQ-FAILS"
        return (0 if rep.holds else 1), verdict, vars(rep), config

    if args.command == "kkt":
        x = parse_vector(args.at)
        if args.action == "check":
            if not args.cert:
                raise LoadError("kkt check requires --cert")
            cert = load_certificate(args.cert, spec)
            cmode = args.mode or "hull"
            config["mode"] = cmode
            rep = check_kkt(spec, x, cert, args.tol, cmode, use_fx)
            verdict = "VALID" if rep.valid else "INVALID"
            return (0 if rep.valid else 1), verdict, vars(rep), config
        rep = search_kkt(spec, x, mode, use_fx, tol=args.tol)
        if rep.found:
            details = {"certificate": rep.certificate.to_jsonable(),
                       "recheck": vars(rep.recheck),
                       "active_indices": rep.active_indices,
                       "heuristic": rep.heuristic,
                       "provenance": rep.provenance}
            return 0, "CERTIFICATE-FOUND", details, config
        return 1, "NONE-FOUND", {"active_indices": rep.active_indices,
                                 "selections_tried": rep.selections_tried},\
            config

    if args.command == "fuzzy":
        x = parse_vector(args.at)
        y = parse_vector(args.ystar)
        rep = fuzzy_kkt_demo(spec, x, y, args.eta, args.radius, args.grid_n,
                             mode=mode)
        if rep.found:
            return 0, "WITNESS-FOUND", vars(rep.witness), config
        return 2, "NONE-FOUND", {"diagnostic": rep.diagnostic}, config

    if args.command == "pseudoconvex":
        x = parse_vector(args.at)
        witness = None
        if args.witness:
            doc = json.loads(Path(args.witness).read_text())
            witness = {
                "x": [parse_scalar(str(t)) for t in doc["x"]],
                "ystar": [parse_scalar(str(t)) for t in doc["ystar"]],
                "u": [[parse_scalar(str(t)) for t in row]
                      for row in doc["u"]],
            }
        region = parse_vector(args.region) if args.region else None
        rep = pseudoconvex_test(spec, x, args.ptype, region=region,
                                grid=args.grid, y_resolution=args.y_res,
                                mode=mode, witness=witness)
        counts: dict[str, int] = {}
        for v in rep.verdicts:
            counts[v.verdict] = counts.get(v.verdict, 0) + 1
        details = {"counts": counts, "lp_optimum": rep.lp_optimum,
                   "samples": len(rep.verdicts)}
        if any(v.verdict == "WITNESSED-FAILURE" for v in rep.verdicts):
            return 1, "WITNESSED-FAILURE", details, config
        if rep.all_verified:
            return 0, "VERIFIED", details, config
        return 2, "INCONCLUSIVE", details, config

    if args.command == "efficiency":
        x = parse_vector(args.at)
        region = parse_vector(args.region)
        rep = classify_point(spec, x, args.kind, region, args.res)
        details = vars(rep)
        if rep.no_counterexample:
            return 0, "NO-COUNTEREXAMPLE", details, config
        return 1, "COUNTEREXAMPLE", details, config

    if args.command == "duality":
        if args.action == "strong":
            if not args.at:
                raise LoadError("duality strong requires --at")
            x = parse_vector(args.at)
            rep = strong_duality_from(spec, x, mode, use_fx)
            details = {"triple": rep.triple.to_jsonable(),
                       "feasibility": vars(rep.feasibility)}
            ok = rep.feasibility.feasible
            return (0 if ok else 1), ("FEASIBLE" if ok else "INFEASIBLE"), \
                details, config
        if args.action == "weak":
            if not args.region:
                raise LoadError("duality weak requires --region")
            region = parse_vector(args.region)
            if args.triples:
                docs = json.loads(Path(args.triples).read_text())
                triples = [DualTriple(np.array(d["z"], dtype=float),
                                      np.array(d["ystar"], dtype=float),
                                      np.array(d["mu"], dtype=float))
                           for d in docs]
            else:
                if not args.at:
                    raise LoadError("duality weak needs --triples or --at")
                srep = strong_duality_from(spec, parse_vector(args.at),
                                           mode, use_fx)
                triples = [srep.triple]
            samples = generate_feasible_samples(spec, region, args.samples)
            rep = weak_duality_check(spec, samples, triples, args.kind,
                                     mode=mode)
            details = {"pairs_checked": rep.pairs_checked,
                       "violation": rep.violation}
            ok = rep.no_violation
            return (0 if ok else 1), \
                ("NO-VIOLATION" if ok else "VIOLATION"), details, config
        if not args.triple or not args.region:
            raise LoadError("duality converse requires --triple and --region")
        triple = load_triple(args.triple)
        region = parse_vector(args.region)
        rep = converse_duality_check(spec, triple, args.kind, region, args.res)
        details = {"kind": rep.kind, "efficiency": vars(rep.efficiency)}
        ok = rep.consistent
        return (0 if ok else 1), \
            ("NO-COUNTEREXAMPLE" if ok else "COUNTEREXAMPLE"), details, config

    raise LoadError(f"unknown command {args.command}")


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
