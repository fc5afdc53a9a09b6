"""Brute-force efficiency classification and Mond-Weir duality checks.

Classification rasters the feasible region and tests the defining cone
relation at every feasible sample; a NO-COUNTEREXAMPLE verdict is always
resolution-qualified, never a proof.  Duality checks reuse the certificate
machinery: dual feasibility is the same zero-membership LP evaluated at
the dual point, and weak/converse duality reduce to cone comparisons over
sampled feasible points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certify import CertifyError, search_kkt
from .robustfeas import (
    ProblemSpec,
    feasibility_mask,
    is_feasible,
    phi_i,
)
from .setcalc import ConeSpec, PolytopeSet, minkowski_sum, normal_cone, scale, zero_in_sum
from .subdiff import constraint_set, objective_set

ZERO_TOL = 1e-12

KINDS = ("efficient", "weak", "quasi", "weak-quasi")


class VerifyError(Exception):
    pass


# ---------------------------------------------------------------------------
# Cone membership
# ---------------------------------------------------------------------------

def cone_membership(yvec, cone: ConeSpec, region: str,
                    ztol: float = ZERO_TOL) -> bool:
    """Membership of y in -K \\ {0} or -int K."""
    y = np.asarray(yvec, dtype=float).reshape(-1)
    if region == "minus-int-K":
        if cone.is_orthant:
            s = np.asarray(cone.pattern, dtype=float)
            return bool(np.all(s * y < -ztol))
        raise VerifyError("interior test needs a sign-orthant cone")
    if region != "minus-K-minus-0":
        raise VerifyError(f"unknown region {region!r}")
    yz = np.where(np.abs(y) <= ztol, 0.0, y)
    if not np.any(yz != 0.0):
        return False
    if cone.is_orthant:
        s = np.asarray(cone.pattern, dtype=float)
        return bool(np.all(s * yz <= 0.0))
    return cone.contains(-y, tol=ztol)


def _membership_mask(D: np.ndarray, cone: ConeSpec, region: str,
                     ztol: float = ZERO_TOL) -> np.ndarray:
    """Vectorized orthant membership over columns of D (shape (p, N))."""
    if not cone.is_orthant:
        return np.array([cone_membership(D[:, t], cone, region)
                         for t in range(D.shape[1])], dtype=bool)
    s = np.asarray(cone.pattern, dtype=float)[:, None]
    if region == "minus-int-K":
        return np.all(s * D < -ztol, axis=0)
    Dz = np.where(np.abs(D) <= ztol, 0.0, D)
    return np.all(s * Dz <= 0.0, axis=0) & np.any(Dz != 0.0, axis=0)


# ---------------------------------------------------------------------------
# Efficiency classification
# ---------------------------------------------------------------------------

@dataclass
class EfficiencyVerdict:
    kind: str
    no_counterexample: bool
    counterexample: np.ndarray | None
    violation: np.ndarray | None
    region: tuple
    resolution: int
    feasible_checked: int


def _kind_params(kind: str) -> tuple[bool, str]:
    if kind == "efficient":
        return False, "minus-K-minus-0"
    if kind == "weak":
        return False, "minus-int-K"
    if kind == "quasi":
        return True, "minus-K-minus-0"
    if kind == "weak-quasi":
        return True, "minus-int-K"
    raise VerifyError(f"unknown efficiency kind {kind!r}")


def classify_point(spec: ProblemSpec, xbar, kind: str, region,
                   resolution: int = 401) -> EfficiencyVerdict:
    """Scan feasible samples for a violation of the chosen solution notion.

    In dimension 2 samples form a raster over ``region``; other dimensions
    draw ``resolution`` uniform samples from the region box (seeded).
    """
    quasi, memb_region = _kind_params(kind)
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    if not is_feasible(spec, xbar):
        raise VerifyError("classification point must be robust-feasible")
    if spec.dim == 2:
        a1, b1, a2, b2 = [float(t) for t in region]
        g1, g2 = np.meshgrid(np.linspace(a1, b1, resolution),
                             np.linspace(a2, b2, resolution), indexing="ij")
        X = np.vstack([g1.ravel(), g2.ravel()])
    else:
        lo = np.asarray(region[0::2], dtype=float)
        hi = np.asarray(region[1::2], dtype=float)
        rng = np.random.default_rng(spec.seed)
        X = (lo[:, None] + (hi - lo)[:, None]
             * rng.random((spec.dim, resolution)))
    mask = feasibility_mask(spec, X)
    Xf = X[:, mask]
    if Xf.shape[1] == 0:
        return EfficiencyVerdict(kind, True, None, None, tuple(region),
                                 resolution, 0)
    F = spec.fvec_grid(Xf)
    fbar = spec.fvec(xbar)
    if quasi:
        c = spec.primal_norm_grid(Xf - xbar[:, None])
    else:
        c = np.ones(Xf.shape[1])
    D = F - fbar[:, None] + np.outer(spec.theta, c)
    bad = _membership_mask(D, spec.cone, memb_region)
    if not np.any(bad):
        return EfficiencyVerdict(kind, True, None, None, tuple(region),
                                 resolution, int(Xf.shape[1]))
    t = int(np.argmax(bad))  # first violation in deterministic scan order
    return EfficiencyVerdict(kind, False, Xf[:, t].copy(), D[:, t].copy(),
                             tuple(region), resolution, int(Xf.shape[1]))


# ---------------------------------------------------------------------------
# Mond-Weir duality
# ---------------------------------------------------------------------------

@dataclass
class DualTriple:
    z: np.ndarray
    ystar: np.ndarray
    mu: np.ndarray

    def objective_value(self, spec: ProblemSpec) -> np.ndarray:
        return spec.fvec(self.z)

    def to_jsonable(self) -> dict:
        return {"z": self.z.tolist(), "ystar": self.ystar.tolist(),
                "mu": self.mu.tolist()}


@dataclass
class DualFeasReport:
    feasible: bool
    checks: list[dict] = field(default_factory=list)
    witness: list | None = None


def dual_feasible(spec: ProblemSpec, triple: DualTriple, tol: float = 1e-9,
                  mode: str = "limiting",
                  use_fixtures: bool = False) -> DualFeasReport:
    """Membership of (z, y*, mu) in the Mond-Weir dual feasible set.

    The stationarity inclusion is decided by the zero-in-sum LP with the
    weighted per-objective sets, mu-scaled sup-rule hulls, the scaled dual
    ball and the normal cone at z; the signed complementarity requires
    mu_i * g_i(z, v_i) >= -tol at the active scenarios.
    """
    z = np.asarray(triple.z, dtype=float).reshape(-1)
    ystar = np.asarray(triple.ystar, dtype=float).reshape(-1)
    mu = np.asarray(triple.mu, dtype=float).reshape(-1)
    checks: list[dict] = []
    kplus = spec.cone.dual()
    ok_y = kplus.contains(ystar) and float(np.max(np.abs(ystar))) > 1e-12
    checks.append({"name": "ystar_in_Kplus_nonzero", "ok": bool(ok_y)})
    ok_mu = bool(np.all(mu >= -1e-12))
    checks.append({"name": "mu_nonnegative", "ok": ok_mu})
    if not spec.omega.contains(z):
        checks.append({"name": "z_in_omega", "ok": False})
        return DualFeasReport(False, checks)

    combo = PolytopeSet.singleton(np.zeros(spec.dim))
    for j in range(1, spec.n_objectives + 1):
        S, _ = objective_set(spec, j, z, mode, use_fixtures)
        combo = minkowski_sum(combo, scale(S, float(ystar[j - 1])))
    parts = [combo]
    comp_ok = True
    for i in range(1, spec.n_constraints + 1):
        S, _ = constraint_set(spec, i, z, "hull", use_fixtures)
        parts.append(scale(S, float(mu[i - 1])))
        val = float(mu[i - 1]) * phi_i(spec, i, z)
        ok = val >= -tol
        comp_ok = comp_ok and ok
        checks.append({"name": f"mu_g_sign_{spec.constraints[i-1].name}",
                       "ok": bool(ok), "value": val})
    from .setcalc import dual_ball

    radius = float(np.dot(ystar, spec.theta))
    ball = PolytopeSet([dual_ball(spec.norm, spec.dim, spec.ball_facets)])
    parts.append(scale(ball, radius))
    N = normal_cone(spec.omega, z)
    res = zero_in_sum(parts, N)
    checks.append({"name": "stationarity_inclusion", "ok": bool(res.sat)})
    feas = bool(ok_y and ok_mu and comp_ok and res.sat)
    witness = None
    if res.sat:
        witness = [w.tolist() for w in res.witness_points(parts)]
    return DualFeasReport(feas, checks, witness)


@dataclass
class WeakDualityReport:
    no_violation: bool
    kind: str
    pairs_checked: int
    violation: dict | None = None


def weak_duality_check(spec: ProblemSpec, samples: np.ndarray,
                       triples: list[DualTriple], kind: str,
                       check_feasibility: bool = True,
                       mode: str = "limiting") -> WeakDualityReport:
    """Non-domination of f(x) against f(z) - ||x - z|| theta over all pairs.

    Kind I uses the weak relation (no violation means f(x) never lands in
    -int K); kind II uses the strict relation via -K \\ {0}.
    """
    if kind not in ("I", "II"):
        raise VerifyError("kind must be 'I' or 'II'")
    memb_region = "minus-int-K" if kind == "I" else "minus-K-minus-0"
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if check_feasibility:
        mask = feasibility_mask(spec, samples.T)
        if not np.all(mask):
            raise VerifyError("weak duality samples must be robust-feasible")
        for tr in triples:
            rep = dual_feasible(spec, tr, mode=mode)
            if not rep.feasible:
                raise VerifyError("weak duality requires dual-feasible triples")
    F = spec.fvec_grid(samples.T)
    pairs = 0
    for tr in triples:
        fz = spec.fvec(tr.z)
        dist = spec.primal_norm_grid(samples.T - tr.z[:, None])
        D = F - fz[:, None] + np.outer(spec.theta, dist)
        bad = _membership_mask(D, spec.cone, memb_region)
        pairs += samples.shape[0]
        if np.any(bad):
            t = int(np.argmax(bad))
            return WeakDualityReport(False, kind, pairs, {
                "x": samples[t].tolist(), "triple": tr.to_jsonable(),
                "relation_value": D[:, t].tolist()})
    return WeakDualityReport(True, kind, pairs)


def generate_feasible_samples(spec: ProblemSpec, region, count: int,
                              seed: int | None = None) -> np.ndarray:
    """Deterministic rejection sampling of robust-feasible points."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    lo = np.asarray(region[0::2], dtype=float)
    hi = np.asarray(region[1::2], dtype=float)
    out = []
    for _ in range(200):
        X = lo[:, None] + (hi - lo)[:, None] * rng.random((spec.dim,
                                                           4 * count))
        mask = feasibility_mask(spec, X)
        good = X[:, mask]
        for t in range(good.shape[1]):
            out.append(good[:, t])
            if len(out) >= count:
                return np.array(out)
    raise VerifyError("could not sample enough feasible points in region")


@dataclass
class StrongDualityReport:
    triple: DualTriple
    feasibility: DualFeasReport
    search_found: bool


def strong_duality_from(spec: ProblemSpec, xbar, mode: str = "limiting",
                        use_fixtures: bool = False) -> StrongDualityReport:
    """Assemble a dual-feasible triple at xbar from a found KKT certificate."""
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    rep = search_kkt(spec, xbar, mode=mode, use_fixtures=use_fixtures)
    if not rep.found:
        raise CertifyError("no KKT certificate found; strong duality "
                           "construction unavailable")
    cert = rep.certificate
    triple = DualTriple(xbar, cert.ystar.copy(), cert.mu.copy())
    feas = dual_feasible(spec, triple, mode=mode, use_fixtures=use_fixtures)
    return StrongDualityReport(triple, feas, True)


@dataclass
class ConverseDualityReport:
    consistent: bool
    kind: str
    efficiency: EfficiencyVerdict


def converse_duality_check(spec: ProblemSpec, triple: DualTriple, kind: str,
                           region, resolution: int = 401,
                           mode: str = "limiting") -> ConverseDualityReport:
    """Check the converse-duality conclusion at a primal-feasible dual point.

    Kind I (type-I pseudo convexity) implies weak quasi-efficiency of z,
    kind II implies quasi-efficiency; both are checked by raster.
    """
    if kind not in ("I", "II"):
        raise VerifyError("kind must be 'I' or 'II'")
    z = np.asarray(triple.z, dtype=float).reshape(-1)
    if not is_feasible(spec, z):
        raise VerifyError("converse duality requires a robust-feasible z")
    rep = dual_feasible(spec, triple, mode=mode)
    if not rep.feasible:
        raise VerifyError("converse duality requires a dual-feasible triple")
    eff_kind = "weak-quasi" if kind == "I" else "quasi"
    verdict = classify_point(spec, z, eff_kind, region, resolution)
    return ConverseDualityReport(verdict.no_counterexample, kind, verdict)
