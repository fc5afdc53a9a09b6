"""Random expression generators for the property suites.

The generators deliberately stay inside the class the subdifferential
engine supports: kink atoms have affine arguments, at most one nonsmooth
factor per product, and (where a test needs exact hulls) pairwise disjoint
coordinate supports across atoms.
"""

from __future__ import annotations

import numpy as np

from robustkkt.funcdsl import parse_expr


def _affine(rng, coords, through=None):
    terms = []
    lin_at = 0.0
    for k in coords:
        c = rng.uniform(0.3, 1.5) * rng.choice([-1.0, 1.0])
        terms.append(f"{c:.4f}*x{k}")
        if through is not None:
            lin_at += float(f"{c:.4f}") * through[k - 1]
    c0 = -float(lin_at) if through is not None else float(rng.uniform(-1, 1))
    return " + ".join(terms) + f" + {c0!r}"


def _atom(rng, coords, through=None):
    """A nonsmooth atom over the given coordinate subset.

    With ``through`` the atom's arguments vanish at that point, so the kink
    (or the max tie) is active exactly there.
    """
    if rng.random() < 0.5:
        return f"abs({_affine(rng, coords, through)})"
    k = int(rng.integers(2, 4))
    return "max(" + ", ".join(_affine(rng, coords, through)
                              for _ in range(k)) + ")"


def _smooth_term(rng, dim):
    k = int(rng.integers(1, dim + 1))
    c = rng.uniform(-1.5, 1.5)
    kind = rng.random()
    if kind < 0.4:
        return f"{c:.4f}*x{k}"
    if kind < 0.7:
        return f"{c:.4f}*x{k}^2"
    j = int(rng.integers(1, dim + 1))
    return f"{c:.4f}*x{k}*x{j}"


def random_supported_expr(rng, dim: int, disjoint_supports: bool = False,
                          allow_wraps: bool = True,
                          through=None) -> "Expr":
    """A random expression the engine accepts at generic points.

    ``through`` pins every atom's kink exactly at that point, which makes
    the pieces of the expression cones there (handy for sampled
    directional-derivative oracles).
    """
    coords = list(range(1, dim + 1))
    rng.shuffle(coords)
    n_atoms = int(rng.integers(1, min(3, dim) + 1))
    if disjoint_supports:
        chunks = [coords[i::n_atoms] for i in range(n_atoms)]
        chunks = [c for c in chunks if c]
    else:
        chunks = [list(rng.choice(coords, size=min(2, dim), replace=False))
                  for _ in range(n_atoms)]
    terms = []
    for chunk in chunks:
        c = rng.uniform(0.3, 2.0) * rng.choice([-1.0, 1.0])
        atom = _atom(rng, chunk, through)
        style = rng.random() if allow_wraps else 1.0
        if style < 0.25:
            terms.append(f"{abs(c):.4f}/({atom} + {rng.uniform(1.0, 2.0):.4f})")
        elif style < 0.45:
            terms.append(f"{c:.4f}*sqrt({atom} + {rng.uniform(1.0, 2.0):.4f})")
        else:
            terms.append(f"{c:.4f}*{atom}")
    for _ in range(int(rng.integers(0, 3))):
        terms.append(_smooth_term(rng, dim))
    return parse_expr(" + ".join(terms), dim)


def random_convex_expr(rng, dim: int) -> "Expr":
    """Nonnegative combination of convex atoms plus an affine part."""
    terms = []
    for _ in range(int(rng.integers(1, 4))):
        c = rng.uniform(0.2, 2.0)
        chunk = list(rng.choice(range(1, dim + 1),
                                size=int(rng.integers(1, dim + 1)),
                                replace=False))
        terms.append(f"{c:.4f}*{_atom(rng, chunk)}")
    terms.append(_affine(rng, range(1, dim + 1)))
    return parse_expr(" + ".join(terms), dim)


def random_point(rng, dim: int, scale: float = 1.5) -> np.ndarray:
    return rng.uniform(-scale, scale, size=dim)


def one_sided_derivative(expr, x, u, t: float = 1e-6) -> float:
    from robustkkt.funcdsl import eval_expr

    return (eval_expr(expr, np.asarray(x) + t * np.asarray(u))
            - eval_expr(expr, x)) / t


def sampled_clarke_derivative(expr, x, u, rng, n_base: int = 96,
                              r: float = 1e-6, t: float = 1e-9) -> float:
    """max of difference quotients over perturbed base points."""
    from robustkkt.funcdsl import eval_expr

    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    best = -np.inf
    for i in range(n_base):
        y = x if i == 0 else x + r * rng.standard_normal(x.shape[0])
        q = (eval_expr(expr, y + t * u) - eval_expr(expr, y)) / t
        best = max(best, q)
    return best
