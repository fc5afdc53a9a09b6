"""Linear programming layer.

All the set questions in this package (is zero in a sum of polytopes, is a
point inside a hull, does a witness direction exist) reduce to small LPs.
Two engines are provided:

* an exact Bland-rule simplex over ``Fraction`` entries, so feasibility
  verdicts on the small equality-form certificate LPs carry no floating
  point doubt (binary floats convert to Fractions losslessly), and
* scipy's HiGHS for the larger inequality systems, with feasibility
  tolerance 1e-9.

``engine="auto"`` picks the exact path for small systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

_MAX_PIVOTS = 20000
_EXACT_COL_LIMIT = 160
_EXACT_ROW_LIMIT = 80
FLOAT_FEAS_TOL = 1e-9


class LPError(Exception):
    pass


def _frac(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    return Fraction(float(x))


def simplex_standard(A, b, c):
    """Exact two-phase simplex for min c.x s.t. A x = b, x >= 0.

    A, b, c contain Fractions.  Returns (status, x, objective) with status
    one of "optimal", "infeasible", "unbounded".
    """
    m = len(A)
    n = len(c)
    rows = []
    rhs = []
    for i in range(m):
        row = list(A[i])
        bi = b[i]
        if bi < 0:
            row = [-a for a in row]
            bi = -bi
        rows.append(row + [Fraction(0)] * m)
        rows[-1][n + i] = Fraction(1)
        rhs.append(bi)
    basis = [n + i for i in range(m)]

    def solve_phase(cost, allow_cols):
        pivots = 0
        while True:
            pivots += 1
            if pivots > _MAX_PIVOTS:
                raise LPError("simplex pivot limit exceeded")
            # reduced costs r_j = c_j - y.A_j with y from the basis
            cb = [cost[j] for j in basis]
            entering = -1
            for j in allow_cols:
                if j in basis:
                    continue
                rj = cost[j]
                for i in range(m):
                    if rows[i][j] != 0:
                        rj -= cb[i] * rows[i][j]
                if rj < 0:
                    entering = j
                    break  # Bland: first (smallest-index) improving column
            if entering < 0:
                return "optimal"
            leaving = -1
            best = None
            for i in range(m):
                aij = rows[i][entering]
                if aij > 0:
                    ratio = rhs[i] / aij
                    if best is None or ratio < best or (
                            ratio == best and basis[i] < basis[leaving]):
                        best = ratio
                        leaving = i
            if leaving < 0:
                return "unbounded"
            _pivot(rows, rhs, basis, leaving, entering)

    def _pivot(rows, rhs, basis, r, col):
        piv = rows[r][col]
        rows[r] = [a / piv for a in rows[r]]
        rhs[r] = rhs[r] / piv
        for i in range(m):
            if i != r and rows[i][col] != 0:
                f = rows[i][col]
                rows[i] = [a - f * p for a, p in zip(rows[i], rows[r])]
                rhs[i] = rhs[i] - f * rhs[r]
        basis[r] = col

    total = n + m
    phase1_cost = [Fraction(0)] * n + [Fraction(1)] * m
    status = solve_phase(phase1_cost, range(total))
    if status != "optimal":  # phase 1 cannot be unbounded, defensive
        return "infeasible", None, None
    art_value = sum(rhs[i] for i in range(m) if basis[i] >= n)
    if art_value > 0:
        return "infeasible", None, None
    # Drive leftover zero-valued artificials out of the basis when possible.
    for i in range(m):
        if basis[i] >= n:
            for j in range(n):
                if rows[i][j] != 0:
                    _pivot(rows, rhs, basis, i, j)
                    break

    phase2_cost = list(c) + [Fraction(0)] * m
    status = solve_phase(phase2_cost, range(n))
    if status == "unbounded":
        return "unbounded", None, None
    x = [Fraction(0)] * n
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = rhs[i]
    obj = sum(ci * xi for ci, xi in zip(c, x))
    return "optimal", x, obj


@dataclass
class LPResult:
    status: str                       # optimal | infeasible | unbounded
    values: np.ndarray | None = None  # per declared variable
    objective: float | None = None
    engine: str = "exact"

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


@dataclass
class LPBuilder:
    """Incremental LP in user variables; handles free-variable splitting.

    Variables are nonnegative unless declared free.  Constraints are either
    equalities or ``<=`` inequalities over the declared variables.
    """
    n: int = 0
    free: list[bool] = field(default_factory=list)
    eqs: list[tuple[dict, float]] = field(default_factory=list)
    ubs: list[tuple[dict, float]] = field(default_factory=list)
    obj: dict = field(default_factory=dict)

    def add_var(self, free: bool = False) -> int:
        self.free.append(free)
        self.n += 1
        return self.n - 1

    def add_vars(self, count: int, free: bool = False) -> list[int]:
        return [self.add_var(free) for _ in range(count)]

    def add_eq(self, coeffs: dict, rhs) -> None:
        self.eqs.append((dict(coeffs), rhs))

    def add_ub(self, coeffs: dict, rhs) -> None:
        self.ubs.append((dict(coeffs), rhs))

    def set_objective(self, coeffs: dict) -> None:
        self.obj = dict(coeffs)

    # -- solving ----------------------------------------------------------

    def solve(self, engine: str = "auto") -> LPResult:
        ncols = self.n + sum(self.free) + len(self.ubs)
        nrows = len(self.eqs) + len(self.ubs)
        if engine == "auto":
            engine = "exact" if (ncols <= _EXACT_COL_LIMIT
                                 and nrows <= _EXACT_ROW_LIMIT) else "float"
        return self._solve_exact() if engine == "exact" else self._solve_float()

    def _split_map(self):
        # variable i -> (pos column, neg column or None)
        cols = []
        nxt = 0
        for i in range(self.n):
            if self.free[i]:
                cols.append((nxt, nxt + 1))
                nxt += 2
            else:
                cols.append((nxt, None))
                nxt += 1
        return cols, nxt

    def _solve_exact(self) -> LPResult:
        cols, base = self._split_map()
        nslack = len(self.ubs)
        total = base + nslack
        A, b = [], []

        def expand(coeffs):
            row = [Fraction(0)] * total
            for i, a in coeffs.items():
                fa = _frac(a)
                p, q = cols[i]
                row[p] += fa
                if q is not None:
                    row[q] -= fa
            return row

        for coeffs, rhs in self.eqs:
            A.append(expand(coeffs))
            b.append(_frac(rhs))
        for s, (coeffs, rhs) in enumerate(self.ubs):
            row = expand(coeffs)
            row[base + s] = Fraction(1)
            A.append(row)
            b.append(_frac(rhs))
        c = [Fraction(0)] * total
        for i, a in self.obj.items():
            fa = _frac(a)
            p, q = cols[i]
            c[p] += fa
            if q is not None:
                c[q] -= fa
        status, x, obj = simplex_standard(A, b, c)
        if status != "optimal":
            return LPResult(status, engine="exact")
        vals = np.zeros(self.n)
        for i in range(self.n):
            p, q = cols[i]
            vi = x[p] - (x[q] if q is not None else 0)
            vals[i] = float(vi)
        return LPResult("optimal", vals, float(obj), engine="exact")

    def _solve_float(self) -> LPResult:
        from scipy.optimize import linprog

        c = np.zeros(self.n)
        for i, a in self.obj.items():
            c[i] = float(a)
        A_eq = b_eq = A_ub = b_ub = None
        if self.eqs:
            A_eq = np.zeros((len(self.eqs), self.n))
            b_eq = np.zeros(len(self.eqs))
            for r, (coeffs, rhs) in enumerate(self.eqs):
                for i, a in coeffs.items():
                    A_eq[r, i] = float(a)
                b_eq[r] = float(rhs)
        if self.ubs:
            A_ub = np.zeros((len(self.ubs), self.n))
            b_ub = np.zeros(len(self.ubs))
            for r, (coeffs, rhs) in enumerate(self.ubs):
                for i, a in coeffs.items():
                    A_ub[r, i] = float(a)
                b_ub[r] = float(rhs)
        bounds = [(None, None) if f else (0, None) for f in self.free]
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=bounds, method="highs",
                      options={"primal_feasibility_tolerance": FLOAT_FEAS_TOL})
        if res.status == 2:
            return LPResult("infeasible", engine="float")
        if res.status == 3:
            return LPResult("unbounded", engine="float")
        if not res.success:
            raise LPError(f"HiGHS failed: {res.message}")
        return LPResult("optimal", np.asarray(res.x), float(res.fun),
                        engine="float")
