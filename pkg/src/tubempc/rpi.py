"""Invariant outer approximation of the minimal disturbance-invariant set.

For the stable error dynamics e+ = A_K e + w, w in a box W, the set

    F = (1 - alpha)^-1 (W + A_K W + ... + A_K^(s-1) W)

is disturbance-invariant once A_K^s W~ is contained in alpha W~, where W~
inflates any zero half-width of W so that the containment test is
satisfiable for degenerate disturbance boxes (the inflation is used only
in the test, never in F itself).  F is kept implicit as a SupportSet;
block_facets produces its exact H-representation when the dynamics
decouple into blocks of dimension <= 2.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateSetError, InvalidArgumentError, StructureError
from .lti import is_schur
from .polytope import Box, HPolytope, SupportSet, support, zonotope_facets_2d


@dataclass(frozen=True)
class RPIApprox:
    """Disturbance-invariant outer approximation with its construction data."""

    F: SupportSet
    s: int
    alpha: float
    A_K: np.ndarray
    W: Box

    def to_dict(self):
        return {"s": self.s, "alpha": self.alpha, "A_K": self.A_K.tolist(), "W": self.W.to_dict()}

    @classmethod
    def from_dict(cls, data):
        A_K = np.asarray(data["A_K"], dtype=float)
        W = Box.from_dict(data["W"])
        return rebuild_rpi(A_K, W, int(data["s"]), float(data["alpha"]))


def rebuild_rpi(A_K, W, s, alpha):
    """Reassemble an RPIApprox from its stored construction parameters."""
    terms = []
    Ai = np.eye(A_K.shape[0])
    for _ in range(s):
        terms.append((Ai.copy(), W))
        Ai = Ai @ A_K
    F = SupportSet(terms=tuple(terms), scale=1.0 / (1.0 - alpha))
    return RPIApprox(F=F, s=s, alpha=alpha, A_K=A_K, W=W)


def _axis_containment_alpha(As, hw_test):
    """Smallest alpha with A^s W~ inside alpha W~ (axis directions suffice)."""
    sup = np.abs(As) @ hw_test  # support of A^s W~ in +/- e_i (centered box)
    return float(np.max(sup / hw_test))


def rakovic_approx(A_K, W, alpha_target=0.05, eta=None, s_cap=500, inv_tol=1e-10):
    """Invariant outer approximation of the minimal disturbance-invariant set.

    Finds the smallest s >= 1 with A_K^s W~ inside alpha W~ for
    alpha <= alpha_target, recomputes alpha at that s, and returns
    F = (1-alpha)^-1 sum of A_K^i W over i < s (the original W).

    For a W with zero half-widths the truncation can never be exactly
    invariant (the containment uses the inflated W~), so s is extended
    until the certified worst-direction invariance defect

        (1-alpha)^-1 * sigma_max(A_K^s) * ||half_widths||_2

    drops below inv_tol; closed loops ride the boundary of this set, so
    the defect must sit well under the feasibility tolerances.
    """
    A_K = np.atleast_2d(np.asarray(A_K, dtype=float))
    if not isinstance(W, Box):
        raise InvalidArgumentError("W must be a Box")
    if not is_schur(A_K):
        raise InvalidArgumentError("A_K must be Schur")
    if not 0.0 < alpha_target < 1.0:
        raise InvalidArgumentError("alpha_target must lie in (0, 1)")
    if not W.is_centered(tol=0.0):
        raise InvalidArgumentError("only centered disturbance boxes are supported")
    hw = W.half_widths
    if eta is None:
        eta = 1e-6 * max(1.0, float(hw.max(initial=0.0)))
    if eta <= 0.0:
        raise InvalidArgumentError("eta must be positive")
    hw_test = np.where(hw == 0.0, eta, hw)
    r_w = float(np.linalg.norm(hw))

    As = A_K.copy()
    s = None
    for k in range(1, s_cap + 1):
        alpha = _axis_containment_alpha(As, hw_test)
        if s is None and alpha <= alpha_target:
            s = k
        if s is not None:
            defect = np.linalg.norm(As, 2) * r_w / (1.0 - alpha)
            if defect <= inv_tol:
                return rebuild_rpi(A_K, W, k, alpha)
        As = As @ A_K
    raise ConvergenceError(f"no invariant truncation found with s <= {s_cap}")


def image_set(K, F):
    """Linear image K F of a support set (maps multiplied on the left)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    terms = tuple((K @ m, b) for m, b in F.terms)
    return SupportSet(terms=terms, scale=F.scale)


def detect_blocks(A_K, tol=1e-12):
    """Connected components of the coupling pattern of A_K, sorted."""
    n = A_K.shape[0]
    pattern = np.abs(A_K) > tol
    pattern |= pattern.T
    seen = np.zeros(n, dtype=bool)
    blocks = []
    for i in range(n):
        if seen[i]:
            continue
        stack, comp = [i], []
        seen[i] = True
        while stack:
            j = stack.pop()
            comp.append(j)
            for k in np.flatnonzero(pattern[j]):
                if not seen[k]:
                    seen[k] = True
                    stack.append(k)
        blocks.append(sorted(comp))
    return blocks


def block_facets(F, blocks, tol=1e-12):
    """Exact H-representation of F for block-decoupled dynamics.

    ``blocks`` must partition the coordinates into groups of dimension
    <= 2 such that every term map of F has no off-block entries; the
    result is the Cartesian product of per-block interval or planar
    zonotope facets, lifted back to the full space.
    """
    n = F.dim
    flat = sorted(i for b in blocks for i in b)
    if flat != list(range(n)):
        raise InvalidArgumentError("blocks must partition the coordinate set")
    if any(len(b) > 2 for b in blocks):
        raise StructureError("blocks of dimension > 2 are not supported")
    for mapping, _ in F.terms:
        for b in blocks:
            outside = [i for i in range(n) if i not in b]
            if outside and np.abs(mapping[np.ix_(b, outside)]).max(initial=0.0) > tol:
                raise StructureError("term maps couple coordinates across blocks")

    rows, offs = [], []
    for b in blocks:
        if len(b) == 1:
            i = b[0]
            e = np.zeros(n)
            e[i] = 1.0
            for sign in (1.0, -1.0):
                rows.append(sign * e)
                offs.append(support(F, sign * e))
        else:
            sub_terms = tuple((m[b, :], box) for m, box in F.terms)
            sub = SupportSet(terms=sub_terms, scale=F.scale)
            try:
                facets = zonotope_facets_2d(sub)
                sub_rows, sub_offs = facets.normals, facets.offsets
            except DegenerateSetError:
                # the block is the single point {center}
                c = sub.center()
                sub_rows = np.vstack([np.eye(2), -np.eye(2)])
                sub_offs = np.concatenate([c, -c])
            for r, o in zip(sub_rows, sub_offs):
                row = np.zeros(n)
                row[b] = r
                rows.append(row)
                offs.append(o)
    return HPolytope(np.array(rows), np.array(offs))
