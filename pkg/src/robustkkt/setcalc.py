"""Exact small-dimension calculus of convex polytopes and finite unions.

Everything is carried in V-representation: the sets that show up in the
worked problems are points, segments and small boxes, so vertex lists stay
tiny and Minkowski sums / hulls / zero-membership reduce to vertex
arithmetic plus little LPs.  Cones are generator lists; sign-orthant cones
get fast closed-form paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .lp import LPBuilder

VERTEX_TOL = 1e-12


class SetCalcError(Exception):
    pass


class DimensionMismatch(SetCalcError):
    pass


# ---------------------------------------------------------------------------
# Polytopes and unions
# ---------------------------------------------------------------------------

def _dedup_rows(rows: np.ndarray, tol: float = VERTEX_TOL) -> np.ndarray:
    order = np.lexsort(rows.T[::-1])
    rows = rows[order]
    keep = [0]
    for i in range(1, rows.shape[0]):
        if np.max(np.abs(rows[i] - rows[keep[-1]])) > tol:
            keep.append(i)
    return rows[keep]


class Polytope:
    """Convex polytope given by its vertices (rows of ``vertices``)."""

    def __init__(self, vertices, reduce: bool = False):
        V = np.atleast_2d(np.asarray(vertices, dtype=float))
        if V.size == 0:
            raise SetCalcError("polytope needs at least one vertex")
        self.vertices = _dedup_rows(V)
        if reduce:
            self.vertices = _extreme_points(self.vertices)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def nverts(self) -> int:
        return self.vertices.shape[0]

    def contains(self, p, tol: float = 1e-9):
        """Membership test; returns (bool, residual) with residual the best
        achievable infinity-norm gap between p and a convex combination."""
        p = np.asarray(p, dtype=float).reshape(-1)
        if p.shape[0] != self.dim:
            raise DimensionMismatch("point/polytope dimension mismatch")
        res = _membership_residual(p, self.vertices)
        return res <= tol, res

    def translate(self, t) -> "Polytope":
        return Polytope(self.vertices + np.asarray(t, dtype=float))

    def __repr__(self):
        return f"Polytope({self.vertices.tolist()})"


def _membership_residual(p: np.ndarray, V: np.ndarray) -> float:
    # min t s.t. |sum_i lam_i v_i - p|_inf <= t, lam in simplex
    d = V.shape[1]
    lp = LPBuilder()
    lam = lp.add_vars(V.shape[0])
    t = lp.add_var()
    lp.add_eq({i: 1 for i in lam}, 1)
    for j in range(d):
        lp.add_ub({**{lam[i]: V[i, j] for i in range(V.shape[0])}, t: -1}, p[j])
        lp.add_ub({**{lam[i]: -V[i, j] for i in range(V.shape[0])}, t: -1}, -p[j])
    lp.set_objective({t: 1})
    res = lp.solve()
    if not res.feasible:  # simplex row always feasible; defensive
        return math.inf
    return max(res.objective, 0.0)


def _extreme_points(V: np.ndarray) -> np.ndarray:
    """Drop vertices that are convex combinations of the others."""
    if V.shape[0] <= 2:
        return V
    keep = np.ones(V.shape[0], dtype=bool)
    for i in range(V.shape[0]):
        others = V[keep & (np.arange(V.shape[0]) != i)]
        if others.shape[0] == 0:
            continue
        if _membership_residual(V[i], others) <= VERTEX_TOL:
            keep[i] = False
    return V[keep]


class PolytopeSet:
    """Finite union of convex polytopes of a common dimension."""

    def __init__(self, components):
        comps = list(components)
        if not comps:
            raise SetCalcError("empty polytope union")
        d = comps[0].dim
        for c in comps:
            if c.dim != d:
                raise DimensionMismatch("mixed dimensions in union")
        self.components = comps

    @classmethod
    def singleton(cls, p) -> "PolytopeSet":
        return cls([Polytope([np.asarray(p, dtype=float)])])

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def ncomponents(self) -> int:
        return len(self.components)

    def all_vertices(self) -> np.ndarray:
        return np.vstack([c.vertices for c in self.components])

    def contains(self, p, tol: float = 1e-9):
        best = math.inf
        for c in self.components:
            _, r = c.contains(p, tol)
            best = min(best, r)
        return best <= tol, best

    def __repr__(self):
        return f"PolytopeSet({[c.vertices.tolist() for c in self.components]})"


def minkowski_sum(a: PolytopeSet, b: PolytopeSet) -> PolytopeSet:
    if a.dim != b.dim:
        raise DimensionMismatch("minkowski_sum dimension mismatch")
    comps = []
    for ca, cb in itertools.product(a.components, b.components):
        sums = (ca.vertices[:, None, :] + cb.vertices[None, :, :]).reshape(-1, a.dim)
        comps.append(Polytope(sums, reduce=True))
    return PolytopeSet(comps)


def scale(a: PolytopeSet, c: float) -> PolytopeSet:
    """Vertexwise scaling; c = 0 collapses the union to the origin."""
    if c == 0:
        return PolytopeSet.singleton(np.zeros(a.dim))
    return PolytopeSet([Polytope(comp.vertices * float(c)) for comp in a.components])


def hull(a: PolytopeSet) -> Polytope:
    return Polytope(a.all_vertices(), reduce=True)


def polytope_equal(a: Polytope, b: Polytope, tol: float = VERTEX_TOL) -> bool:
    if a.nverts != b.nverts or a.dim != b.dim:
        return False
    return bool(np.max(np.abs(a.vertices - b.vertices)) <= tol)


# ---------------------------------------------------------------------------
# Cones
# ---------------------------------------------------------------------------

class PolyCone:
    """Conic hull of generators; lineality generators span both directions."""

    def __init__(self, dim: int, generators=None, lineality=None):
        self.dim = dim
        G = np.zeros((0, dim)) if generators is None else np.atleast_2d(
            np.asarray(generators, dtype=float))
        if G.size == 0:
            G = np.zeros((0, dim))
        if G.shape[0]:
            norms = np.linalg.norm(G, axis=1)
            if np.any(norms == 0):
                raise SetCalcError("cone generators must be nonzero")
        self.generators = G
        if lineality is None:
            self.lineality = np.zeros(G.shape[0], dtype=bool)
        else:
            self.lineality = np.asarray(lineality, dtype=bool)

    @classmethod
    def zero(cls, dim: int) -> "PolyCone":
        return cls(dim)

    @classmethod
    def whole_space(cls, dim: int) -> "PolyCone":
        eye = np.eye(dim)
        return cls(dim, eye, lineality=np.ones(dim, dtype=bool))

    @property
    def is_zero(self) -> bool:
        return self.generators.shape[0] == 0

    def contains(self, p, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float).reshape(-1)
        if self.is_zero:
            return bool(np.max(np.abs(p), initial=0.0) <= tol)
        lp = LPBuilder()
        cs = [lp.add_var(free=bool(self.lineality[i]))
              for i in range(self.generators.shape[0])]
        t = lp.add_var()
        for j in range(self.dim):
            row = {cs[i]: self.generators[i, j]
                   for i in range(len(cs)) if self.generators[i, j] != 0}
            lp.add_ub({**row, t: -1}, p[j])
            lp.add_ub({**{k: -a for k, a in row.items()}, t: -1}, -p[j])
        lp.set_objective({t: 1})
        res = lp.solve()
        return res.feasible and res.objective <= tol

    def __repr__(self):
        return (f"PolyCone(dim={self.dim}, generators="
                f"{self.generators.tolist()}, lineality={self.lineality.tolist()})")


@dataclass(frozen=True)
class ConeSpec:
    """Either a per-axis sign-orthant cone or a general generator cone.

    A sign pattern entry +1 means the axis is constrained >= 0, -1 means
    <= 0.  Sign-orthant cones are pointed and closed by construction.
    """
    pattern: tuple[int, ...] | None = None
    cone: PolyCone | None = None

    def __post_init__(self):
        if (self.pattern is None) == (self.cone is None):
            raise SetCalcError("ConeSpec needs exactly one of pattern/cone")
        if self.pattern is not None and any(s not in (-1, 1) for s in self.pattern):
            raise SetCalcError("sign pattern entries must be +1 or -1")

    @property
    def dim(self) -> int:
        return len(self.pattern) if self.pattern is not None else self.cone.dim

    @property
    def is_orthant(self) -> bool:
        return self.pattern is not None

    def contains(self, y, tol: float = 1e-12) -> bool:
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.is_orthant:
            s = np.asarray(self.pattern, dtype=float)
            return bool(np.all(s * y >= -tol))
        return self.cone.contains(y, tol=max(tol, 1e-12))

    def contains_interior(self, y, tol: float = 1e-12) -> bool:
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.is_orthant:
            s = np.asarray(self.pattern, dtype=float)
            return bool(np.all(s * y > tol))
        raise SetCalcError("interior test only supported for sign-orthant cones")

    def is_pointed(self, tol: float = 1e-9) -> bool:
        if self.is_orthant:
            return True
        c = self.cone
        if c.is_zero:
            return True
        if np.any(c.lineality):
            return False
        # not pointed iff some nonzero nonnegative combination cancels
        lp = LPBuilder()
        lam = lp.add_vars(c.generators.shape[0])
        for j in range(c.dim):
            lp.add_eq({lam[i]: c.generators[i, j] for i in range(len(lam))}, 0)
        lp.add_eq({i: 1 for i in lam}, 1)
        return not lp.solve().feasible

    def as_cone(self) -> PolyCone:
        if self.is_orthant:
            d = self.dim
            G = np.eye(d) * np.asarray(self.pattern, dtype=float)[:, None]
            return PolyCone(d, G)
        return self.cone

    def dual(self) -> "ConeSpec":
        if self.is_orthant:
            # dual of a sign orthant is the same sign orthant
            return ConeSpec(pattern=self.pattern)
        return ConeSpec(cone=dual_cone(self.cone))


def dual_cone(c: PolyCone) -> PolyCone:
    """Dual cone {y : <y, g> >= 0 for all generators g} in V-representation.

    Sign-orthant duals are handled by ConeSpec; this generator-cone path is
    supported for dim <= 3 where candidate-ray enumeration is feasible.
    """
    d = c.dim
    if d > 3:
        raise SetCalcError("generator-cone dual unsupported above dimension 3")
    if c.is_zero:
        return PolyCone.whole_space(d)
    # Constraints: <g, y> >= 0 (equality when g is a lineality generator).
    gens = c.generators
    lin = c.lineality

    def feasible(y, tol=1e-10):
        for g, is_lin in zip(gens, lin):
            val = float(np.dot(g, y))
            if is_lin:
                if abs(val) > tol:
                    return False
            elif val < -tol:
                return False
        return True

    cands: list[np.ndarray] = []
    if d == 1:
        cands = [np.array([1.0]), np.array([-1.0])]
    elif d == 2:
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        for g in gens:
            cands.extend([rot @ g, -(rot @ g)])
        cands.extend([g.copy() for g in gens])
        cands.extend([-g for g in gens])
    else:
        pool = [g for g in gens] + [e for e in np.eye(3)]
        for a, b in itertools.combinations(range(len(pool)), 2):
            cr = np.cross(pool[a], pool[b])
            if np.linalg.norm(cr) > 1e-12:
                cands.extend([cr, -cr])
        cands.extend([g.copy() for g in gens])
        cands.extend([-g for g in gens])
        cands.extend([e.copy() for e in np.eye(3)])
        cands.extend([-e for e in np.eye(3)])
    rays = []
    for r in cands:
        nr = np.linalg.norm(r)
        if nr < 1e-12:
            continue
        r = r / nr
        if feasible(r) and not any(np.linalg.norm(r - q) < 1e-9 for q in rays):
            rays.append(r)
    if not rays:
        return PolyCone.zero(d)
    out = PolyCone(d, np.array(rays))
    _verify_dual_cover(out, gens, lin)
    return out


def _verify_dual_cover(cand: PolyCone, gens, lin, samples: int = 64) -> None:
    """Sampled completeness check: random dual points must lie in cand."""
    rng = np.random.default_rng(7)
    d = cand.dim
    found = 0
    for _ in range(samples * 8):
        if found >= samples:
            break
        y = rng.standard_normal(d)
        for g, is_lin in zip(gens, lin):
            if is_lin:
                y = y - float(np.dot(g, y)) * g / float(np.dot(g, g))
        if any(float(np.dot(g, y)) < 0 for g, is_lin in zip(gens, lin)
               if not is_lin):
            continue
        found += 1
        if not cand.contains(y, tol=1e-7 * max(1.0, float(np.linalg.norm(y)))):
            raise SetCalcError("dual cone enumeration incomplete for this input")


# ---------------------------------------------------------------------------
# Ground sets and normal cones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OmegaSpec:
    """Ground set: whole space, a box, or an intersection of halfspaces."""
    kind: str                       # "whole" | "box" | "halfspaces"
    dim: int
    lo: np.ndarray | None = None    # box
    hi: np.ndarray | None = None
    normals: np.ndarray | None = None  # halfspaces a.x <= b, rows of normals
    offsets: np.ndarray | None = None

    @classmethod
    def whole(cls, dim: int) -> "OmegaSpec":
        return cls("whole", dim)

    @classmethod
    def box(cls, lo, hi) -> "OmegaSpec":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise SetCalcError("invalid box bounds")
        return cls("box", lo.shape[0], lo=lo, hi=hi)

    @classmethod
    def halfspaces(cls, normals, offsets) -> "OmegaSpec":
        A = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.asarray(offsets, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise SetCalcError("halfspace normals/offsets mismatch")
        return cls("halfspaces", A.shape[1], normals=A, offsets=b)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.kind == "whole":
            return True
        if self.kind == "box":
            return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    def contains_grid(self, X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        if self.kind == "whole":
            return np.ones(X.shape[1], dtype=bool)
        if self.kind == "box":
            ok = np.ones(X.shape[1], dtype=bool)
            for j in range(self.dim):
                ok &= (X[j] >= self.lo[j] - tol) & (X[j] <= self.hi[j] + tol)
            return ok
        return np.all(self.normals @ X <= self.offsets[:, None] + tol, axis=0)


def normal_cone(omega: OmegaSpec, x, tol: float = 1e-9) -> PolyCone:
    """Normal cone to omega at x, generated by active outward normals."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not omega.contains(x, tol):
        raise SetCalcError("point lies outside the ground set")
    d = omega.dim
    if omega.kind == "whole":
        return PolyCone.zero(d)
    gens = []
    if omega.kind == "box":
        for j in range(d):
            e = np.zeros(d)
            if np.isfinite(omega.lo[j]) and x[j] <= omega.lo[j] + tol:
                e2 = e.copy()
                e2[j] = -1.0
                gens.append(e2)
            if np.isfinite(omega.hi[j]) and x[j] >= omega.hi[j] - tol:
                e2 = e.copy()
                e2[j] = 1.0
                gens.append(e2)
    else:
        for a, b in zip(omega.normals, omega.offsets):
            if abs(float(np.dot(a, x)) - float(b)) <= tol * max(1.0, abs(b)) + tol:
                gens.append(np.asarray(a, dtype=float))
    if not gens:
        return PolyCone.zero(d)
    return PolyCone(d, np.array(gens))


# ---------------------------------------------------------------------------
# Dual-norm balls
# ---------------------------------------------------------------------------

def dual_ball(norm: str, d: int, m: int = 64, mode: str = "inner") -> Polytope:
    """Unit ball of the dual norm as a polytope.

    l1 and linf primal norms give exact boxes/cross-polytopes.  The l2 dual
    ball is approximated by an inscribed polytope (so certificates found
    with it stay valid); mode="outer" gives the circumscribed polygon in
    dimension 2 for refutation work.
    """
    if d < 1:
        raise SetCalcError("dimension must be >= 1")
    if norm == "l1":
        corners = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        return Polytope(corners)
    if norm == "linf":
        return Polytope(np.vstack([np.eye(d), -np.eye(d)]))
    if norm != "l2":
        raise SetCalcError(f"unsupported norm {norm!r}")
    if d == 1:
        return Polytope([[-1.0], [1.0]])
    if d == 2:
        if m < 8:
            raise SetCalcError("l2 ball needs at least 8 facets")
        verts = _regular_polygon(m)
        if mode == "outer":
            verts = verts / math.cos(math.pi / m)
        elif mode != "inner":
            raise SetCalcError(f"unknown ball mode {mode!r}")
        return Polytope(verts)
    if d == 3:
        if mode != "inner":
            raise SetCalcError("outer l2 ball unsupported in dimension 3")
        dirs = []
        for pattern in ((1, 0, 0), (1, 1, 0), (1, 1, 1)):
            for perm in set(itertools.permutations(pattern)):
                base = np.asarray(perm, dtype=float)
                base /= np.linalg.norm(base)
                for signs in itertools.product((-1.0, 1.0), repeat=3):
                    vec = base * np.asarray(signs)
                    dirs.append(vec)
        return Polytope(np.array(dirs))
    raise SetCalcError("l2 dual ball unsupported above dimension 3")


def _regular_polygon(m: int) -> np.ndarray:
    """Inscribed regular m-gon with exact axis vertices and +-symmetry.

    When m is divisible by 4 the vertices are generated in one quadrant and
    reflected, so (0, -1) and (-1, 0) are bit-exact; for even m the polygon
    is exactly symmetric under negation by construction.
    """
    pts: set[tuple[float, float]] = set()
    if m % 4 == 0:
        q = m // 4
        for j in range(q + 1):
            theta = 0.5 * math.pi * j / q
            x = math.cos(theta) if j < q else 0.0
            y = math.sin(theta) if j > 0 else 0.0
            for sx, sy in itertools.product((1.0, -1.0), repeat=2):
                pts.add((sx * x, sy * y))
    elif m % 2 == 0:
        for j in range(m // 2):
            theta = 2.0 * math.pi * j / m
            x, y = math.cos(theta), math.sin(theta)
            pts.add((x, y))
            pts.add((-x, -y))
    else:
        for j in range(m):
            theta = 2.0 * math.pi * j / m
            pts.add((math.cos(theta), math.sin(theta)))
    return _dedup_rows(np.array(sorted(pts)))


# ---------------------------------------------------------------------------
# Zero membership in a sum of unions plus a cone
# ---------------------------------------------------------------------------

@dataclass
class ZeroInSumResult:
    sat: bool
    selection: tuple[int, ...] | None = None
    weights: list[np.ndarray] | None = None   # per part, per vertex
    cone_coeffs: np.ndarray | None = None
    residual: float | None = None

    def witness_points(self, parts: list[PolytopeSet]) -> list[np.ndarray]:
        out = []
        for p, (part, w) in enumerate(zip(parts, self.weights)):
            comp = part.components[self.selection[p]]
            out.append(w @ comp.vertices)
        return out


def zero_in_sum(parts: list[PolytopeSet], cone: PolyCone | None = None,
                engine: str = "auto") -> ZeroInSumResult:
    """Decide 0 in sum(parts) + cone, exactly over component selections.

    For each choice of one convex component per union part an LP looks for
    convex weights and nonnegative cone coefficients summing to zero; the
    first satisfiable selection is returned.
    """
    if not parts:
        raise SetCalcError("zero_in_sum needs at least one part")
    d = parts[0].dim
    for p in parts:
        if p.dim != d:
            raise DimensionMismatch("zero_in_sum dimension mismatch")
    if cone is not None and cone.dim != d:
        raise DimensionMismatch("cone dimension mismatch")

    for selection in itertools.product(*(range(p.ncomponents) for p in parts)):
        lp = LPBuilder()
        groups = []
        for p, part in enumerate(parts):
            comp = part.components[selection[p]]
            ids = lp.add_vars(comp.nverts)
            groups.append((ids, comp.vertices))
            lp.add_eq({i: 1 for i in ids}, 1)
        cids = []
        if cone is not None and not cone.is_zero:
            cids = [lp.add_var(free=bool(cone.lineality[i]))
                    for i in range(cone.generators.shape[0])]
        for j in range(d):
            row = {}
            for ids, V in groups:
                for i, vid in enumerate(ids):
                    if V[i, j] != 0.0:
                        row[vid] = row.get(vid, 0.0) + V[i, j]
            for i, cid in enumerate(cids):
                g = cone.generators[i, j]
                if g != 0.0:
                    row[cid] = row.get(cid, 0.0) + g
            lp.add_eq(row, 0)
        res = lp.solve(engine)
        if res.feasible:
            weights = [res.values[np.asarray(ids)] for ids, _ in groups]
            ccoef = res.values[np.asarray(cids)] if cids else np.zeros(0)
            total = np.zeros(d)
            for (ids, V), w in zip(groups, weights):
                total += w @ V
            if cids:
                total += ccoef @ cone.generators
            return ZeroInSumResult(True, selection, weights, ccoef,
                                   float(np.linalg.norm(total)))
    return ZeroInSumResult(False)


def point_in_cone_residual(p, cone: PolyCone) -> float:
    """Infinity-norm distance from representing p as a conic combination."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if cone.is_zero:
        return float(np.max(np.abs(p), initial=0.0))
    lp = LPBuilder()
    cs = [lp.add_var(free=bool(cone.lineality[i]))
          for i in range(cone.generators.shape[0])]
    t = lp.add_var()
    for j in range(cone.dim):
        row = {cs[i]: cone.generators[i, j]
               for i in range(len(cs)) if cone.generators[i, j] != 0}
        lp.add_ub({**row, t: -1}, p[j])
        lp.add_ub({**{k: -a for k, a in row.items()}, t: -1}, -p[j])
    lp.set_objective({t: 1})
    res = lp.solve()
    return max(res.objective, 0.0) if res.feasible else math.inf
