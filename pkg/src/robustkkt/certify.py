"""Constraint qualification, robust approximate KKT certificates, the fuzzy
necessary-condition demonstrator and generalized pseudo-convexity testing.

Certificates follow the worked problems' arithmetic: the scalarized
objective term is the weighted sum of per-objective subgradient choices,
constraint terms come from the sup-rule hulls, the ball term is scaled by
<y*, theta>, and everything must cancel against a normal-cone element.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .funcdsl import eval_expr
from .lp import LPBuilder
from .robustfeas import (
    ProblemSpec,
    Psi,
    active_uncertainty,
    compute_active_sets,
    is_feasible,
    phi,
    phi_i,
    zero_active_indices,
)
from .setcalc import (
    PolyCone,
    Polytope,
    PolytopeSet,
    dual_ball,
    normal_cone,
    point_in_cone_residual,
    zero_in_sum,
)
from .subdiff import constraint_set, limiting_subdiff, objective_set, scalarized_subdiff

COMPLEMENTARITY_TOL = 1e-8
MEMBERSHIP_TOL = 1e-9
EPS_STRICT = 1e-7
EPS_YSTAR_MIN = 1e-6


class CertifyError(Exception):
    pass


def primal_ball(norm: str, d: int, m: int) -> Polytope:
    """Polyhedral inner approximation of the primal-norm unit ball."""
    if norm == "l2":
        return dual_ball("l2", d, m)
    if norm == "l1":
        return dual_ball("linf", d)
    if norm == "linf":
        return dual_ball("l1", d)
    raise CertifyError(f"unsupported norm {norm!r}")


def dual_norm_value(norm: str, b) -> float:
    b = np.asarray(b, dtype=float).reshape(-1)
    if norm == "l2":
        return float(np.linalg.norm(b))
    if norm == "l1":  # dual of l1 is linf
        return float(np.max(np.abs(b), initial=0.0))
    return float(np.sum(np.abs(b)))  # dual of linf is l1


# ---------------------------------------------------------------------------
# Constraint qualification
# ---------------------------------------------------------------------------

@dataclass
class CQReport:
    holds: bool
    index_set: tuple[int, ...]
    per_index: list[dict]
    provenance: dict[str, str]


def check_cq(spec: ProblemSpec, xbar, use_fixtures: bool = False,
             scen_tol: float = 1e-6) -> CQReport:
    """Definition-style CQ: for every envelope-active index, zero must miss
    the sup-rule hull plus the normal cone."""
    if not is_feasible(spec, xbar):
        raise CertifyError("CQ is only defined at robust-feasible points")
    acts = compute_active_sets(spec, xbar, scen_tol)
    N = normal_cone(spec.omega, xbar)
    per = []
    prov: dict[str, str] = {}
    holds = True
    for i in acts.index_set:
        S, origin = constraint_set(spec, i, xbar, "hull", use_fixtures, scen_tol)
        prov[spec.constraints[i - 1].name] = origin
        res = zero_in_sum([S], N)
        ok = not res.sat
        holds = holds and ok
        entry = {"i": i, "zero_excluded": ok}
        if res.sat:
            entry["witness"] = [w.tolist() for w in res.witness_points([S])]
        per.append(entry)
    return CQReport(holds, acts.index_set, per, prov)


# ---------------------------------------------------------------------------
# KKT certificates
# ---------------------------------------------------------------------------

@dataclass
class KKTCertificate:
    ystar: np.ndarray                  # in K+ \ {0}
    mu: np.ndarray                     # nonnegative multipliers
    u: list[np.ndarray]                # per-objective subgradient choices
    v: list[np.ndarray]                # per-constraint sup-rule elements
    vbar: list[float]                  # active scenarios backing each v
    bstar: np.ndarray                  # dual-ball element
    astar: np.ndarray                  # normal-cone element

    def residual_vector(self, theta) -> np.ndarray:
        total = np.zeros_like(self.bstar, dtype=float)
        for yj, uj in zip(self.ystar, self.u):
            total = total + float(yj) * np.asarray(uj, dtype=float)
        for mi, vi in zip(self.mu, self.v):
            total = total + float(mi) * np.asarray(vi, dtype=float)
        r = float(np.dot(self.ystar, theta))
        total = total + r * np.asarray(self.bstar, dtype=float)
        total = total + np.asarray(self.astar, dtype=float)
        return total

    def residual(self, theta) -> float:
        return float(np.linalg.norm(self.residual_vector(theta)))

    def to_jsonable(self) -> dict:
        return {
            "ystar": self.ystar.tolist(),
            "mu": self.mu.tolist(),
            "u": [np.asarray(u).tolist() for u in self.u],
            "v": [np.asarray(v).tolist() for v in self.v],
            "vbar": list(self.vbar),
            "bstar": self.bstar.tolist(),
            "astar": self.astar.tolist(),
        }


@dataclass
class KKTCheckReport:
    valid: bool
    residual: float
    checks: list[dict] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)


def check_kkt(spec: ProblemSpec, xbar, cert: KKTCertificate, tol: float = 1e-9,
              mode: str = "hull", use_fixtures: bool = False,
              mem_tol: float = MEMBERSHIP_TOL) -> KKTCheckReport:
    """Verify every membership and the residual of a certificate."""
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    p, n, d = spec.n_objectives, spec.n_constraints, spec.dim
    if (len(cert.u) != p or len(cert.v) != n or cert.ystar.shape[0] != p
            or cert.mu.shape[0] != n or cert.bstar.shape[0] != d):
        raise CertifyError("certificate fields dimensionally inconsistent")
    checks: list[dict] = []
    prov: dict[str, str] = {}

    kplus = spec.cone.dual()
    ok_y = kplus.contains(cert.ystar) and float(
        np.max(np.abs(cert.ystar))) > 1e-12
    checks.append({"name": "ystar_in_Kplus_nonzero", "ok": bool(ok_y)})

    ok_mu = bool(np.all(cert.mu >= -1e-12))
    checks.append({"name": "mu_nonnegative", "ok": ok_mu})

    comp_ok = True
    for i in range(1, n + 1):
        val = float(cert.mu[i - 1]) * phi_i(spec, i, xbar)
        comp_ok = comp_ok and abs(val) <= COMPLEMENTARITY_TOL
        checks.append({"name": f"complementarity_{spec.constraints[i-1].name}",
                       "ok": abs(val) <= COMPLEMENTARITY_TOL, "value": val})

    memb_ok = True
    for j in range(1, p + 1):
        S, origin = objective_set(spec, j, xbar, mode, use_fixtures)
        prov[spec.objective_names[j - 1]] = origin
        inside, res = S.contains(cert.u[j - 1], mem_tol)
        memb_ok = memb_ok and inside
        checks.append({"name": f"u_in_subdiff_{spec.objective_names[j-1]}",
                       "ok": bool(inside), "residual": res})
    for i in range(1, n + 1):
        S, origin = constraint_set(spec, i, xbar, "hull", use_fixtures)
        prov[spec.constraints[i - 1].name] = origin
        inside, res = S.contains(cert.v[i - 1], mem_tol)
        memb_ok = memb_ok and inside
        checks.append({"name": f"v_in_suprule_{spec.constraints[i-1].name}",
                       "ok": bool(inside), "residual": res})

    bnorm = dual_norm_value(spec.norm, cert.bstar)
    ok_b = bnorm <= 1.0 + 1e-12
    checks.append({"name": "bstar_in_dual_ball", "ok": bool(ok_b),
                   "dual_norm": bnorm})

    N = normal_cone(spec.omega, xbar)
    ares = point_in_cone_residual(cert.astar, N)
    ok_a = ares <= mem_tol
    checks.append({"name": "astar_in_normal_cone", "ok": bool(ok_a),
                   "residual": ares})

    resid = cert.residual(spec.theta)
    ok_r = resid <= tol
    checks.append({"name": "stationarity_residual", "ok": bool(ok_r),
                   "residual": resid, "tol": tol})

    valid = bool(ok_y and ok_mu and comp_ok and memb_ok and ok_b and ok_a and ok_r)
    return KKTCheckReport(valid, resid, checks, prov)


@dataclass
class KKTSearchReport:
    found: bool
    certificate: KKTCertificate | None
    recheck: KKTCheckReport | None
    active_indices: tuple[int, ...]
    selections_tried: int
    heuristic: bool = False
    provenance: dict[str, str] = field(default_factory=dict)


def search_kkt(spec: ProblemSpec, xbar, mode: str = "limiting",
               use_fixtures: bool = False, eps_min: float = EPS_YSTAR_MIN,
               tol: float = 1e-9, scen_tol: float = 1e-6) -> KKTSearchReport:
    """One-LP search for a robust approximate KKT certificate at xbar.

    For a sign-orthant cone the substitution y*_j = sigma_j s_j makes the
    whole inclusion linear in vertex weights whose group totals are the
    multipliers; the 1-norm normalization sum(s) + sum(mu) = 1 plus
    sum(s) >= eps_min pins the scale and forbids y* = 0.  Non-orthant
    cones fall back to a direction-grid heuristic.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    if not is_feasible(spec, xbar):
        raise CertifyError("search_kkt requires a robust-feasible point")
    p, n, d = spec.n_objectives, spec.n_constraints, spec.dim
    actives = zero_active_indices(spec, xbar)
    prov: dict[str, str] = {}

    obj_sets = []
    for j in range(1, p + 1):
        S, origin = objective_set(spec, j, xbar, mode, use_fixtures)
        prov[spec.objective_names[j - 1]] = origin
        obj_sets.append(S)
    con_sets = {}
    con_scen = {}
    for i in actives:
        S, origin = constraint_set(spec, i, xbar, "hull", use_fixtures, scen_tol)
        prov[spec.constraints[i - 1].name] = origin
        con_sets[i] = S.components[0] if S.ncomponents == 1 else Polytope(
            S.all_vertices(), reduce=True)
        scen = active_uncertainty(spec, i, xbar, scen_tol)
        con_scen[i] = scen[0] if scen else 0.0
    ball = dual_ball(spec.norm, d, spec.ball_facets)
    N = normal_cone(spec.omega, xbar)

    if not spec.cone.is_orthant:
        return _search_kkt_heuristic(spec, xbar, obj_sets, con_sets, con_scen,
                                     ball, N, actives, eps_min, tol, mode,
                                     use_fixtures, prov)

    sigma = np.asarray(spec.cone.dual().pattern, dtype=float)
    tried = 0
    for selection in itertools.product(*(range(s.ncomponents) for s in obj_sets)):
        tried += 1
        lp = LPBuilder()
        obj_vars = []
        for j in range(p):
            comp = obj_sets[j].components[selection[j]]
            ids = lp.add_vars(comp.nverts)
            obj_vars.append((ids, sigma[j] * comp.vertices))
        con_vars = {}
        for i in actives:
            comp = con_sets[i]
            con_vars[i] = (lp.add_vars(comp.nverts), comp.vertices)
        ball_ids = lp.add_vars(ball.nverts)
        cone_ids = []
        if not N.is_zero:
            cone_ids = [lp.add_var(free=bool(N.lineality[k]))
                        for k in range(N.generators.shape[0])]
        # stationarity rows
        for a in range(d):
            row: dict[int, float] = {}
            for ids, V in obj_vars:
                for t, vid in enumerate(ids):
                    if V[t, a] != 0.0:
                        row[vid] = row.get(vid, 0.0) + V[t, a]
            for ids, V in con_vars.values():
                for t, vid in enumerate(ids):
                    if V[t, a] != 0.0:
                        row[vid] = row.get(vid, 0.0) + V[t, a]
            for t, vid in enumerate(ball_ids):
                if ball.vertices[t, a] != 0.0:
                    row[vid] = row.get(vid, 0.0) + ball.vertices[t, a]
            for k, cid in enumerate(cone_ids):
                g = N.generators[k, a]
                if g != 0.0:
                    row[cid] = row.get(cid, 0.0) + g
            lp.add_eq(row, 0)
        # ball weight total equals <y*, theta> = sum_j sigma_j theta_j s_j
        row = {vid: 1.0 for vid in ball_ids}
        for j, (ids, _) in enumerate(obj_vars):
            coef = -sigma[j] * spec.theta[j]
            if coef != 0.0:
                for vid in ids:
                    row[vid] = row.get(vid, 0.0) + coef
        lp.add_eq(row, 0)
        # normalization and y* != 0
        norm_row = {}
        for ids, _ in obj_vars:
            for vid in ids:
                norm_row[vid] = 1.0
        for ids, _ in con_vars.values():
            for vid in ids:
                norm_row[vid] = 1.0
        lp.add_eq(norm_row, 1)
        smin_row = {}
        for ids, _ in obj_vars:
            for vid in ids:
                smin_row[vid] = -1.0
        lp.add_ub(smin_row, -eps_min)
        res = lp.solve()
        if not res.feasible:
            continue

        # assemble the certificate from group weights
        ystar = np.zeros(p)
        u = []
        for j, (ids, _) in enumerate(obj_vars):
            comp = obj_sets[j].components[selection[j]]
            w = res.values[np.asarray(ids)]
            s = float(np.sum(w))
            ystar[j] = sigma[j] * s
            u.append(w @ comp.vertices / s if s > 1e-15
                     else comp.vertices[0].copy())
        mu = np.zeros(n)
        vsel = []
        vbar = []
        for i in range(1, n + 1):
            if i in con_vars:
                ids, V = con_vars[i]
                w = res.values[np.asarray(ids)]
                m = float(np.sum(w))
                mu[i - 1] = m
                vsel.append(w @ V / m if m > 1e-15 else V[0].copy())
                vbar.append(con_scen[i])
            else:
                S, origin = constraint_set(spec, i, xbar, "hull",
                                           use_fixtures, scen_tol)
                prov[spec.constraints[i - 1].name] = origin
                vsel.append(S.all_vertices()[0].copy())
                scen = active_uncertainty(spec, i, xbar, scen_tol)
                vbar.append(scen[0] if scen else 0.0)
        wb = res.values[np.asarray(ball_ids)]
        radius = float(np.sum(wb))
        bstar = (wb @ ball.vertices / radius) if radius > 1e-15 else np.zeros(d)
        astar = np.zeros(d)
        if cone_ids:
            astar = res.values[np.asarray(cone_ids)] @ N.generators
        cert = KKTCertificate(ystar, mu, u, vsel, vbar, bstar, astar)
        recheck = check_kkt(spec, xbar, cert, tol, mode, use_fixtures)
        return KKTSearchReport(True, cert, recheck, tuple(actives), tried,
                               provenance=prov)
    return KKTSearchReport(False, None, None, tuple(actives), tried,
                           provenance=prov)


def _search_kkt_heuristic(spec, xbar, obj_sets, con_sets, con_scen, ball, N,
                          actives, eps_min, tol, mode, use_fixtures, prov,
                          directions: int = 24) -> KKTSearchReport:
    """Grid over normalized y* directions in K+ with a per-candidate LP."""
    p, n, d = spec.n_objectives, spec.n_constraints, spec.dim
    dual = spec.cone.dual()
    gens = dual.as_cone().generators if not dual.is_orthant else np.eye(p)
    tried = 0
    for weights in _simplex_grid(gens.shape[0], directions):
        ydir = weights @ gens
        l1 = float(np.sum(np.abs(ydir)))
        if l1 < 1e-12:
            continue
        ydir = ydir / l1
        tried += 1
        for selection in itertools.product(
                *(range(s.ncomponents) for s in obj_sets)):
            lp = LPBuilder()
            alpha = lp.add_var()
            obj_vars = []
            for j in range(p):
                comp = obj_sets[j].components[selection[j]]
                ids = lp.add_vars(comp.nverts)
                lp.add_eq({**{t: 1.0 for t in ids}, alpha: -1.0}, 0)
                obj_vars.append((ids, ydir[j] * comp.vertices))
            con_vars = {i: (lp.add_vars(con_sets[i].nverts),
                            con_sets[i].vertices) for i in actives}
            ball_ids = lp.add_vars(ball.nverts)
            cone_ids = [] if N.is_zero else [
                lp.add_var(free=bool(N.lineality[k]))
                for k in range(N.generators.shape[0])]
            for a in range(d):
                row: dict[int, float] = {}
                for ids, V in obj_vars:
                    for t, vid in enumerate(ids):
                        row[vid] = row.get(vid, 0.0) + V[t, a]
                for ids, V in con_vars.values():
                    for t, vid in enumerate(ids):
                        row[vid] = row.get(vid, 0.0) + V[t, a]
                for t, vid in enumerate(ball_ids):
                    row[vid] = row.get(vid, 0.0) + ball.vertices[t, a]
                for k, cid in enumerate(cone_ids):
                    row[cid] = row.get(cid, 0.0) + N.generators[k, a]
                lp.add_eq(row, 0)
            ytheta = float(np.dot(ydir, spec.theta))
            lp.add_eq({**{vid: 1.0 for vid in ball_ids}, alpha: -ytheta}, 0)
            norm_row = {alpha: 1.0}
            for ids, _ in con_vars.values():
                for vid in ids:
                    norm_row[vid] = 1.0
            lp.add_eq(norm_row, 1)
            lp.add_ub({alpha: -1.0}, -eps_min)
            res = lp.solve()
            if not res.feasible:
                continue
            a_val = float(res.values[alpha])
            ystar = a_val * ydir
            u = []
            for j, (ids, _) in enumerate(obj_vars):
                comp = obj_sets[j].components[selection[j]]
                w = res.values[np.asarray(ids)]
                s = float(np.sum(w))
                u.append(w @ comp.vertices / s if s > 1e-15
                         else comp.vertices[0].copy())
            mu = np.zeros(n)
            vsel, vbar = [], []
            for i in range(1, n + 1):
                if i in con_vars:
                    ids, V = con_vars[i]
                    w = res.values[np.asarray(ids)]
                    m = float(np.sum(w))
                    mu[i - 1] = m
                    vsel.append(w @ V / m if m > 1e-15 else V[0].copy())
                    vbar.append(con_scen[i])
                else:
                    S, _ = constraint_set(spec, i, xbar, "hull", use_fixtures)
                    vsel.append(S.all_vertices()[0].copy())
                    scen = active_uncertainty(spec, i, xbar)
                    vbar.append(scen[0] if scen else 0.0)
            wb = res.values[np.asarray(ball_ids)]
            radius = float(np.sum(wb))
            bstar = (wb @ ball.vertices / radius) if radius > 1e-15 else np.zeros(d)
            astar = np.zeros(d)
            if cone_ids:
                astar = res.values[np.asarray(cone_ids)] @ N.generators
            cert = KKTCertificate(ystar, mu, u, vsel, vbar, bstar, astar)
            recheck = check_kkt(spec, xbar, cert, tol, mode, use_fixtures)
            return KKTSearchReport(True, cert, recheck, tuple(actives), tried,
                                   heuristic=True, provenance=prov)
    return KKTSearchReport(False, None, None, tuple(actives), tried,
                           heuristic=True, provenance=prov)


def multiplier_only_feasible(spec: ProblemSpec, xbar,
                             use_fixtures: bool = False) -> bool:
    """Feasibility of the search LP restricted to y* = 0 (cross-check)."""
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    actives = zero_active_indices(spec, xbar)
    if not actives:
        return False
    N = normal_cone(spec.omega, xbar)
    lp = LPBuilder()
    groups = []
    for i in actives:
        S, _ = constraint_set(spec, i, xbar, "hull", use_fixtures)
        comp = S.components[0] if S.ncomponents == 1 else Polytope(
            S.all_vertices(), reduce=True)
        groups.append((lp.add_vars(comp.nverts), comp.vertices))
    cone_ids = [] if N.is_zero else [lp.add_var(free=bool(N.lineality[k]))
                                     for k in range(N.generators.shape[0])]
    d = spec.dim
    for a in range(d):
        row: dict[int, float] = {}
        for ids, V in groups:
            for t, vid in enumerate(ids):
                row[vid] = row.get(vid, 0.0) + V[t, a]
        for k, cid in enumerate(cone_ids):
            row[cid] = row.get(cid, 0.0) + N.generators[k, a]
        lp.add_eq(row, 0)
    lp.add_eq({vid: 1.0 for ids, _ in groups for vid in ids}, 1)
    return lp.solve().feasible


# ---------------------------------------------------------------------------
# Fuzzy condition demonstrator
# ---------------------------------------------------------------------------

@dataclass
class FuzzyKKTWitness:
    x_eta: np.ndarray
    lam: tuple[float, float]
    mu: np.ndarray
    scenarios: tuple[float, ...]
    inclusion_residual: float
    comp_residual_obj: float
    comp_residual_con: float
    normalization: float


@dataclass
class FuzzyReport:
    found: bool
    witness: FuzzyKKTWitness | None
    diagnostic: str = ""


def fuzzy_kkt_demo(spec: ProblemSpec, xbar, ystar, eta: float,
                   radius: float | None = None, grid_n: int = 81,
                   comp_tol: float = 1e-9, mode: str = "limiting") -> FuzzyReport:
    """Locate an Ekeland-style point and solve the perturbed inclusion.

    The merit function psi is grid-minimized over the ground set within the
    search radius; the inclusion LP then runs at the located point with
    ball radius <y*, theta>/eta and branch gates matching the two
    complementarity relations.
    """
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    ystar = np.asarray(ystar, dtype=float).reshape(-1)
    if float(np.max(np.abs(ystar), initial=0.0)) <= 1e-15:
        raise CertifyError("fuzzy demonstrator needs a nonzero ystar")
    if eta <= 0:
        raise CertifyError("eta must be positive")
    R = eta if radius is None else float(radius)
    step = 2.0 * R / (grid_n - 1)
    if step > eta:
        return FuzzyReport(False, None,
                           "grid resolution coarser than eta; no search point")
    merit = Psi(spec, ystar, xbar)
    axes = [np.linspace(xbar[k] - R, xbar[k] + R, grid_n)
            for k in range(spec.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.vstack([m.ravel() for m in mesh])
    dist = spec.primal_norm_grid(X - xbar[:, None])
    keep = (dist <= eta + 1e-12) & spec.omega.contains_grid(X)
    if not np.any(keep):
        return FuzzyReport(False, None, "no admissible grid point within eta")
    Xc = X[:, keep]
    vals = merit.on_grid(Xc)
    dc = dist[keep]
    order = np.lexsort((*(Xc[k] for k in reversed(range(spec.dim))), dc,
                        np.round(vals, 12)))
    x_eta = Xc[:, order[0]].copy()

    psi_val = merit(x_eta)
    f_branch = float(np.dot(ystar, spec.fvec(x_eta) - spec.fvec(xbar)
                            + spec.theta))
    phi_val = phi(spec, x_eta) if spec.constraints else -math.inf
    tight1 = f_branch >= psi_val - max(comp_tol, 1e-9)
    tight2 = phi_val >= psi_val - max(comp_tol, 1e-9)

    sc = scalarized_subdiff(ystar, spec.objectives, x_eta, mode, spec.kink_tol)
    fset = sc.direct.set
    acts = compute_active_sets(spec, x_eta) if spec.constraints else None
    idx = list(acts.index_set) if acts else []
    con_polys = {}
    scen_used = {}
    for i in idx:
        S, _ = constraint_set(spec, i, x_eta, "hull")
        con_polys[i] = S.components[0] if S.ncomponents == 1 else Polytope(
            S.all_vertices(), reduce=True)
        scen = active_uncertainty(spec, i, x_eta)
        scen_used[i] = scen[0] if scen else 0.0
    ball = dual_ball(spec.norm, spec.dim, spec.ball_facets)
    N = normal_cone(spec.omega, x_eta)
    ytheta = float(np.dot(ystar, spec.theta))
    ball_total = ytheta / eta

    for comp in fset.components:
        lp = LPBuilder()
        a1 = lp.add_var()
        a2 = lp.add_var()
        f_ids = lp.add_vars(comp.nverts)
        lp.add_eq({**{t: 1.0 for t in f_ids}, a1: -1.0}, 0)
        c_vars = {}
        c_row = {a2: -1.0}
        for i in idx:
            ids = lp.add_vars(con_polys[i].nverts)
            c_vars[i] = ids
            for vid in ids:
                c_row[vid] = 1.0
        lp.add_eq(c_row, 0)
        ball_ids = lp.add_vars(ball.nverts)
        lp.add_eq({vid: 1.0 for vid in ball_ids}, ball_total)
        cone_ids = [] if N.is_zero else [lp.add_var(free=bool(N.lineality[k]))
                                         for k in range(N.generators.shape[0])]
        for a in range(spec.dim):
            row: dict[int, float] = {}
            for t, vid in enumerate(f_ids):
                row[vid] = row.get(vid, 0.0) + comp.vertices[t, a]
            for i in idx:
                V = con_polys[i].vertices
                for t, vid in enumerate(c_vars[i]):
                    row[vid] = row.get(vid, 0.0) + V[t, a]
            for t, vid in enumerate(ball_ids):
                row[vid] = row.get(vid, 0.0) + ball.vertices[t, a]
            for k, cid in enumerate(cone_ids):
                row[cid] = row.get(cid, 0.0) + N.generators[k, a]
            lp.add_eq(row, 0)
        lp.add_eq({a1: 1.0, a2: 1.0}, 1)
        if not tight1:
            lp.add_eq({a1: 1.0}, 0)
        if not tight2 or not idx:
            lp.add_eq({a2: 1.0}, 0)
        res = lp.solve()
        if not res.feasible:
            continue
        a1v = float(res.values[a1])
        a2v = float(res.values[a2])
        mu_bar = np.zeros(spec.n_constraints)
        if a2v > 1e-15:
            for i in idx:
                mu_bar[i - 1] = float(np.sum(res.values[np.asarray(c_vars[i])])) / a2v
        elif idx:
            mu_bar[idx[0] - 1] = 1.0
        lam1 = a1v
        norm_mu_bar = float(np.sum(mu_bar))
        lam2 = a1v * float(np.sum(np.abs(ystar))) + norm_mu_bar
        if lam2 <= 1e-15:
            continue
        mu = mu_bar / lam2

        total = np.zeros(spec.dim)
        total += res.values[np.asarray(f_ids)] @ comp.vertices
        for i in idx:
            total += res.values[np.asarray(c_vars[i])] @ con_polys[i].vertices
        total += res.values[np.asarray(ball_ids)] @ ball.vertices
        if cone_ids:
            total += res.values[np.asarray(cone_ids)] @ N.generators
        incl_res = float(np.linalg.norm(total))
        comp1 = (lam1 / lam2) * (f_branch - psi_val)
        comp2 = 0.0
        for i in idx:
            gi = eval_expr(spec.constraints[i - 1].expr, x_eta,
                           scen_used[i] if spec.constraints[i - 1].has_uncertainty
                           else None)
            comp2 = max(comp2, abs((1.0 - lam1) * mu[i - 1] * (gi - psi_val)))
        normalization = (lam1 / lam2) * float(np.sum(np.abs(ystar))) + float(
            np.sum(np.abs(mu)))
        witness = FuzzyKKTWitness(
            x_eta, (lam1, lam2), mu,
            tuple(scen_used.get(i, 0.0) for i in range(1, spec.n_constraints + 1)),
            incl_res, comp1, comp2, normalization)
        return FuzzyReport(True, witness)
    return FuzzyReport(False, None, "inclusion LP unsatisfiable at x_eta")


# ---------------------------------------------------------------------------
# Generalized pseudo-convexity testing
# ---------------------------------------------------------------------------

@dataclass
class SampleVerdict:
    x: np.ndarray
    verdict: str                # VERIFIED-CANDIDATE-W | VERIFIED-COMMON-W |
    #                             INCONCLUSIVE | WITNESSED-FAILURE
    premise_active: int = 0
    detail: str = ""

    @property
    def verified(self) -> bool:
        return self.verdict in ("VERIFIED-CANDIDATE-W", "VERIFIED-COMMON-W")


@dataclass
class PseudoReport:
    ptype: str
    verdicts: list[SampleVerdict]
    all_verified: bool
    lp_optimum: float | None = None   # explicit-witness path only


def ystar_grid(spec: ProblemSpec, resolution: int = 24) -> np.ndarray:
    """Interior midpoint grid on the l1-normalized cross-section of K+.

    Midpoint (open) parametrization keeps degenerate boundary rays such as
    single-objective unit vectors off the grid; those edges are exercised
    through explicit witnesses instead.
    """
    dual = spec.cone.dual()
    if dual.is_orthant:
        gens = np.eye(spec.n_objectives) * np.asarray(
            dual.pattern, dtype=float)[:, None]
    else:
        gens = dual.as_cone().generators
    m = gens.shape[0]
    if m == 1:
        return gens / np.sum(np.abs(gens[0]))
    out = []
    for weights in _simplex_grid(m, resolution):
        y = weights @ gens
        l1 = float(np.sum(np.abs(y)))
        if l1 > 1e-12:
            out.append(y / l1)
    return np.array(out)


def _simplex_grid(m: int, resolution: int):
    """Midpoint stick-breaking grid over the (m-1)-simplex."""
    if m == 1:
        yield np.array([1.0])
        return
    ticks = (np.arange(resolution) + 0.5) / resolution
    for combo in itertools.product(ticks, repeat=m - 1):
        w = np.zeros(m)
        remaining = 1.0
        for k, t in enumerate(combo):
            w[k] = remaining * t
            remaining *= (1.0 - t)
        w[m - 1] = remaining
        yield w


def _constraint_rows(spec: ProblemSpec, xbar, scen_tol: float):
    """Per (constraint, active scenario): scenario, base value, vertex rows."""
    rows = []
    for i in range(1, spec.n_constraints + 1):
        con = spec.constraints[i - 1]
        scens = active_uncertainty(spec, i, xbar, scen_tol) \
            if con.has_uncertainty else [None]
        for vsc in scens:
            base = eval_expr(con.expr, xbar, vsc)
            sd = limiting_subdiff(con.expr, xbar, vsc, "limiting",
                                  spec.kink_tol)
            rows.append((i, vsc, base, sd.set.all_vertices()))
    return rows


def pseudoconvex_test(spec: ProblemSpec, xbar, ptype: str,
                      samples: np.ndarray | None = None,
                      region=None, grid: int = 21, y_resolution: int = 24,
                      eps_strict: float = EPS_STRICT, mode: str = "limiting",
                      scen_tol: float = 1e-6,
                      witness: dict | None = None) -> PseudoReport:
    """Sampled sufficient test of type I/II pseudo convexity at xbar.

    For every sample x and every y* on the dual-cone grid whose scalarized
    premise holds, a witness direction w is sought: first the candidate
    w = x - xbar, then a max-margin LP per convex component of the
    scalarized subdifferential (the definition lets w depend on the
    subgradient choice).  INCONCLUSIVE never asserts failure; failures
    come only from an explicit witness tuple, checked exactly.
    """
    if ptype not in ("I", "II"):
        raise CertifyError("type must be 'I' or 'II'")
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    if not spec.omega.contains(xbar):
        raise CertifyError("xbar must lie in the ground set")

    if witness is not None:
        return _witnessed_failure_check(spec, xbar, ptype, witness, scen_tol)

    if samples is None:
        if region is None:
            raise CertifyError("provide samples or a sampling region")
        if spec.dim != 2:
            raise CertifyError("grid sampling requires dimension 2")
        a1, b1, a2, b2 = [float(t) for t in region]
        g1, g2 = np.meshgrid(np.linspace(a1, b1, grid),
                             np.linspace(a2, b2, grid), indexing="ij")
        samples = np.vstack([g1.ravel(), g2.ravel()]).T
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    inside = spec.omega.contains_grid(samples.T)
    samples = samples[inside]

    ys = ystar_grid(spec, y_resolution)
    fbar = spec.fvec(xbar)
    F = spec.fvec_grid(samples.T)          # (p, N)
    D = samples.T - xbar[:, None]
    norms = spec.primal_norm_grid(D)       # (N,)
    # premise margins m(x, y) for the whole grid at once
    G = ys @ (F - fbar[:, None]) + np.outer(ys @ spec.theta, norms)  # (M, N)
    if ptype == "I":
        # the premise is a strict inequality; eps_strict is the margin used
        # for strict inequalities throughout
        active = G < -eps_strict
    else:
        active = G <= 1e-12
    active[:, norms <= 1e-12] = False

    con_rows = _constraint_rows(spec, xbar, scen_tol)
    T = len(con_rows)
    con_base = {t: (row[2], row[3]) for t, row in enumerate(con_rows)}
    con_prem = np.zeros((T, samples.shape[0]), dtype=bool)
    row_cand_ok = np.ones((T, samples.shape[0]), dtype=bool)
    for t, (i, vsc, base, verts) in enumerate(con_rows):
        vals = np.array([eval_expr(spec.constraints[i - 1].expr, s, vsc)
                         for s in samples])
        con_prem[t] = vals <= base + 1e-12
        if verts.size:
            row_cand_ok[t] = np.max(verts @ D, axis=0) <= 1e-12
    # candidate w = x - xbar against premise-holding constraint rows
    cand_g_ok = ~np.any(con_prem & ~row_cand_ok, axis=0)

    N = normal_cone(spec.omega, xbar)
    cone_ok = np.ones(samples.shape[0], dtype=bool)
    for k in range(N.generators.shape[0]):
        vals = N.generators[k] @ D
        if N.lineality[k]:
            cone_ok &= np.abs(vals) <= 1e-12
        else:
            cone_ok &= vals <= 1e-12

    pball = primal_ball(spec.norm, spec.dim, spec.ball_facets)
    ytheta_all = ys @ spec.theta

    scal_cache: dict[int, tuple[PolytopeSet, np.ndarray]] = {}

    def scal_set(myi: int) -> tuple[PolytopeSet, np.ndarray]:
        if myi not in scal_cache:
            s = scalarized_subdiff(ys[myi], spec.objectives, xbar, mode,
                                   spec.kink_tol).direct.set
            scal_cache[myi] = (s, s.all_vertices())
        return scal_cache[myi]

    # normalized witness margins, cached per (y index, premise-row mask):
    # the witness LP is positively homogeneous in ||x - xbar||, so one
    # normalized solve serves every sample sharing the rows
    margin_cache: dict[tuple[int, tuple[bool, ...]], float | None] = {}

    def normalized_margin(myi: int, mask: tuple[bool, ...]) -> float | None:
        key = (myi, mask)
        if key not in margin_cache:
            rows_here = [t for t in range(T) if mask[t]]
            best: float | None = math.inf
            sset, _ = scal_set(myi)
            for comp in sset.components:
                delta = _component_witness_margin(
                    comp, 1.0, float(ytheta_all[myi]), rows_here, con_base,
                    N, pball, l2_exact_dirs=(spec.norm == "l2"))
                if delta is None:
                    best = None
                    break
                best = min(best, delta)
            margin_cache[key] = best
        return margin_cache[key]

    verdicts: list[SampleVerdict] = []
    for sidx in range(samples.shape[0]):
        x = samples[sidx]
        nrm = norms[sidx]
        active_y = np.nonzero(active[:, sidx])[0]
        mask = tuple(bool(b) for b in con_prem[:, sidx])
        need_lp = False
        inconclusive = None
        for myi in active_y:
            yv = ys[myi]
            _, U = scal_set(int(myi))
            if cand_g_ok[sidx] and cone_ok[sidx]:
                top = float(np.max(U @ D[:, sidx]))
                if top + nrm * float(ytheta_all[myi]) <= -1e-12:
                    continue
            margin = normalized_margin(int(myi), mask)
            if margin is None or margin * nrm < eps_strict:
                inconclusive = (f"no witness margin >= {eps_strict:g} at "
                                f"y*={np.round(yv, 6).tolist()}")
                break
            need_lp = True
        if inconclusive is not None:
            verdicts.append(SampleVerdict(x, "INCONCLUSIVE",
                                          len(active_y), inconclusive))
        elif need_lp:
            verdicts.append(SampleVerdict(x, "VERIFIED-COMMON-W", len(active_y)))
        else:
            verdicts.append(SampleVerdict(x, "VERIFIED-CANDIDATE-W",
                                          len(active_y)))
    all_ok = all(v.verified for v in verdicts)
    return PseudoReport(ptype, verdicts, all_ok)



def _component_witness_margin(comp: Polytope, nrm, ytheta, rows_here,
                              con_base, N: PolyCone, pball: Polytope,
                              l2_exact_dirs: bool = False) -> float | None:
    """Max margin delta with <u, w> + nrm*ytheta <= -delta for the component.

    With l2_exact_dirs the inscribed ball gains the exact unit directions
    opposite the component's vertices (still on the sphere, so still an
    inner approximation); this removes the polygon deficit along the
    directions that matter near premise boundaries.
    """
    d = comp.dim
    ball_verts = pball.vertices
    if l2_exact_dirs:
        extra = []
        for u in comp.vertices:
            nu = float(np.linalg.norm(u))
            if nu > 1e-15:
                extra.append(-u / nu)
        if extra:
            ball_verts = np.vstack([ball_verts, np.array(extra)])
    lp = LPBuilder()
    w_ids = lp.add_vars(d, free=True)
    delta = lp.add_var()
    lam = lp.add_vars(ball_verts.shape[0])
    # w = nrm * sum lam_b * ball_vertex, sum lam <= 1
    for a in range(d):
        row = {w_ids[a]: 1.0}
        for t, vid in enumerate(lam):
            row[vid] = -nrm * ball_verts[t, a]
        lp.add_eq(row, 0)
    lp.add_ub({vid: 1.0 for vid in lam}, 1)
    for vert in comp.vertices:
        row = {delta: 1.0}
        for a in range(d):
            if vert[a] != 0.0:
                row[w_ids[a]] = vert[a]
        lp.add_ub(row, -nrm * ytheta)
    for t in rows_here:
        _, verts = con_base[t]
        for vert in verts:
            row = {w_ids[a]: vert[a] for a in range(d) if vert[a] != 0.0}
            if row:
                lp.add_ub(row, 0)
    for k in range(N.generators.shape[0]):
        g = N.generators[k]
        row = {w_ids[a]: g[a] for a in range(d) if g[a] != 0.0}
        if N.lineality[k]:
            lp.add_eq(row, 0)
        else:
            lp.add_ub(row, 0)
    lp.set_objective({delta: -1.0})  # maximize delta
    res = lp.solve(engine="float")
    if not res.feasible:
        return None
    return -res.objective


def _witnessed_failure_check(spec: ProblemSpec, xbar, ptype: str,
                             witness: dict, scen_tol: float) -> PseudoReport:
    """Exact check of a user-supplied failure witness tuple."""
    x = np.asarray(witness["x"], dtype=float).reshape(-1)
    yv = np.asarray(witness["ystar"], dtype=float).reshape(-1)
    umat = [np.asarray(u, dtype=float).reshape(-1) for u in witness["u"]]
    if len(umat) != spec.n_objectives:
        raise CertifyError("witness must choose one subgradient per objective")
    for j, uj in enumerate(umat):
        S, _ = objective_set(spec, j + 1, xbar, "hull", False)
        inside, res = S.contains(uj, 1e-9)
        if not inside:
            raise CertifyError(
                f"witness u[{j}] outside the subdifferential "
                f"(residual {res:.3g})")
    if not spec.cone.dual().contains(yv):
        raise CertifyError("witness ystar outside K+")
    nrm = spec.primal_norm(x - xbar)
    fbar = spec.fvec(xbar)
    margin = float(np.dot(yv, spec.fvec(x) - fbar)) + nrm * float(
        np.dot(yv, spec.theta))
    if ptype == "I":
        premise = margin < -1e-12
    else:
        premise = margin <= 1e-12 and nrm > 1e-12 and float(
            np.max(np.abs(yv))) > 1e-12
    if not premise:
        return PseudoReport(ptype, [SampleVerdict(x, "INCONCLUSIVE", 0,
                                                  "premise not active")], False)
    ustar = np.zeros(spec.dim)
    for yj, uj in zip(yv, umat):
        ustar = ustar + float(yj) * uj
    ytheta = float(np.dot(yv, spec.theta))
    rows = _constraint_rows(spec, xbar, scen_tol)
    g_rows = []
    for i, vsc, base, verts in rows:
        val = eval_expr(spec.constraints[i - 1].expr, x, vsc)
        if val <= base + 1e-12:
            g_rows.append(verts)
    N = normal_cone(spec.omega, xbar)
    pball = primal_ball(spec.norm, spec.dim, spec.ball_facets)
    # minimize <u*, w> over all admissible w; failure iff optimum + r >= 0
    lp = LPBuilder()
    w_ids = lp.add_vars(spec.dim, free=True)
    lam = lp.add_vars(pball.nverts)
    for a in range(spec.dim):
        row = {w_ids[a]: 1.0}
        for t, vid in enumerate(lam):
            row[vid] = -nrm * pball.vertices[t, a]
        lp.add_eq(row, 0)
    lp.add_ub({vid: 1.0 for vid in lam}, 1)
    for verts in g_rows:
        for vert in verts:
            row = {w_ids[a]: vert[a] for a in range(spec.dim)
                   if vert[a] != 0.0}
            if row:
                lp.add_ub(row, 0)
    for k in range(N.generators.shape[0]):
        g = N.generators[k]
        row = {w_ids[a]: g[a] for a in range(spec.dim) if g[a] != 0.0}
        if N.lineality[k]:
            lp.add_eq(row, 0)
        else:
            lp.add_ub(row, 0)
    lp.set_objective({w_ids[a]: ustar[a] for a in range(spec.dim)})
    res = lp.solve()
    if not res.feasible:
        raise CertifyError("admissible witness region empty")
    best = res.objective + nrm * ytheta
    if best >= -1e-12:
        v = SampleVerdict(x, "WITNESSED-FAILURE", 1,
                          f"min <u*,w> + r = {best:.3g} >= 0 for all w")
        return PseudoReport(ptype, [v], False, lp_optimum=best)
    v = SampleVerdict(x, "INCONCLUSIVE", 1,
                      "a witness direction exists for this tuple")
    return PseudoReport(ptype, [v], False, lp_optimum=best)
