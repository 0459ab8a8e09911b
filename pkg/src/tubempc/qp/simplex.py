"""Dense two-phase tableau simplex for small LPs over halfspace systems.

Solves ``max/min c'x  s.t.  G x <= h`` with x free.  Free variables are
split (x = xp - xm), slacks complete the standard form, and rows with a
negative right-hand side receive artificial variables driven out in
phase 1.  Pivoting is Dantzig by default and switches permanently to
Bland's rule after a run of degenerate pivots, which guarantees
termination.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError

_PIVOT_TOL = 1e-10
_COST_TOL = 1e-10
_DEGENERATE_STREAK = 30


@dataclass
class LpResult:
    """Outcome of an LP solve.

    status is one of "optimal", "unbounded", "infeasible".  ``x`` and
    ``value`` refer to the original (max or min) problem.  ``y`` holds the
    duals of the rows G x <= h (y >= 0, complementary); for infeasible
    problems ``farkas`` is a ray with y >= 0, y'G ~ 0, y'h < 0.
    """

    status: str
    x: np.ndarray | None = None
    value: float = np.nan
    y: np.ndarray | None = None  # G'y = c (max) or G'y = -c (min), y >= 0
    farkas: np.ndarray | None = None
    iterations: int = 0
    ray: np.ndarray | None = field(default=None, repr=False)


class _Tableau:
    """Simplex tableau: constraint rows plus one or two cost rows."""

    def __init__(self, body, basis):
        self.T = body  # (q + n_cost_rows) x (n_cols + 1), rhs last
        self.basis = basis  # length q
        self.q = len(basis)
        self.iterations = 0
        self.bland = False
        self._degenerate = 0

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        coef = T[:, col].copy()
        coef[row] = 0.0
        T -= np.outer(coef, T[row])
        # re-orthogonalize the pivot column exactly
        T[:, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1

    def run(self, cost_row, allowed, max_iter):
        """Minimize the cost carried in tableau row ``cost_row``.

        ``allowed`` masks the columns that may enter the basis.  Returns
        "optimal" or "unbounded".
        """
        T = self.T
        q = self.q
        while True:
            if self.iterations > max_iter:
                raise RuntimeError("simplex iteration cap exceeded")  # pragma: no cover
            red = T[cost_row, :-1]
            if self.bland:
                cand = np.flatnonzero(allowed & (red < -_COST_TOL))
                if cand.size == 0:
                    return "optimal"
                j = cand[0]
            else:
                masked = np.where(allowed, red, np.inf)
                j = int(np.argmin(masked))
                if masked[j] >= -_COST_TOL:
                    return "optimal"
            col = T[:q, j]
            pos = col > _PIVOT_TOL
            if not pos.any():
                self._ray_col = j
                return "unbounded"
            ratios = np.where(pos, T[:q, -1] / np.where(pos, col, 1.0), np.inf)
            rmin = ratios.min()
            if self.bland:
                tie = np.flatnonzero(ratios <= rmin + 1e-12)
                r = tie[int(np.argmin(self.basis[tie]))]
            else:
                r = int(np.argmin(ratios))
            before = T[cost_row, -1]
            self.pivot(r, j)
            if abs(T[cost_row, -1] - before) <= 1e-12 * (1.0 + abs(before)):
                self._degenerate += 1
                if self._degenerate >= _DEGENERATE_STREAK:
                    self.bland = True
            else:
                self._degenerate = 0


def solve_lp(c, G, h, sense="max"):
    """Solve ``sense c'x  s.t.  G x <= h`` with x unrestricted in sign.

    Returns an LpResult.  q = 0 rows are allowed (then any improving
    direction makes a nonzero objective unbounded).
    """
    c = np.asarray(c, dtype=float).ravel()
    G = np.asarray(G, dtype=float)
    if G.ndim != 2:
        raise InvalidArgumentError("G must be a 2-D array")
    h = np.asarray(h, dtype=float).ravel()
    q, d = G.shape
    if c.size != d or h.size != q:
        raise InvalidArgumentError("inconsistent LP dimensions")
    if not (np.isfinite(c).all() and np.isfinite(G).all() and np.isfinite(h).all()):
        raise InvalidArgumentError("LP data must be finite")
    if sense not in ("max", "min"):
        raise InvalidArgumentError("sense must be 'max' or 'min'")

    # internally minimize
    c_min = -c if sense == "max" else c.copy()

    if q == 0:
        if np.any(np.abs(c_min) > 0):
            return LpResult(status="unbounded")
        return LpResult(status="optimal", x=np.zeros(d), value=0.0, y=np.zeros(0))

    flip = h < 0
    sgn = np.where(flip, -1.0, 1.0)
    A = sgn[:, None] * G
    b = sgn * h
    n_art = int(flip.sum())

    # columns: xp (d) | xm (d) | slack (q) | artificial (n_art)
    n_cols = 2 * d + q + n_art
    body = np.zeros((q + 2, n_cols + 1))
    body[:q, :d] = A
    body[:q, d : 2 * d] = -A
    body[:q, 2 * d : 2 * d + q] = np.diag(sgn)
    art_cols = np.full(q, -1, dtype=int)
    k = 2 * d + q
    for i in np.flatnonzero(flip):
        body[i, k] = 1.0
        art_cols[i] = k
        k += 1
    body[:q, -1] = b

    basis = np.where(flip, art_cols, 2 * d + np.arange(q))

    # phase-2 cost row (row q): minimize c_min'(xp - xm), reduced vs basis
    body[q, :d] = c_min
    body[q, d : 2 * d] = -c_min
    # phase-1 cost row (row q+1): minimize sum of artificials
    if n_art:
        body[q + 1, 2 * d + q : n_cols] = 1.0

    tab = _Tableau(body, basis.copy())
    max_iter = 5000 + 50 * (q + n_cols)

    allowed = np.ones(n_cols, dtype=bool)
    if n_art:
        # reduce phase-1 cost row against the artificial basis
        for i in np.flatnonzero(flip):
            body[q + 1] -= body[i]
        status = tab.run(q + 1, allowed, max_iter)
        assert status == "optimal"  # phase 1 is always bounded below by 0
        phase1_val = -body[q + 1, -1]
        if phase1_val > 1e-8:
            # Farkas ray: the phase-1 dual of row i equals the reduced cost
            # of its slack column (y >= 0, y'G = 0, y'h = -phase1_val < 0)
            y = np.maximum(body[q + 1, 2 * d : 2 * d + q], 0.0)
            return LpResult(status="infeasible", farkas=y, iterations=tab.iterations)
        # drive any artificial still in the basis out of it (degenerate rows)
        allowed[2 * d + q :] = False
        for i in range(q):
            if tab.basis[i] >= 2 * d + q:
                row = body[i, : 2 * d + q]
                cand = np.flatnonzero(np.abs(row) > _PIVOT_TOL)
                if cand.size:
                    tab.pivot(i, int(cand[0]))
                # else: redundant zero row, harmless to leave basic at 0

    status = tab.run(q, allowed, max_iter)
    xp = np.zeros(n_cols)
    for i in range(q):
        xp[tab.basis[i]] = body[i, -1]
    x = xp[:d] - xp[d : 2 * d]

    if status == "unbounded":
        j = tab._ray_col
        # recession direction in x-space for diagnostics
        ray = np.zeros(d)
        if j < d:
            ray[j] = 1.0
        elif j < 2 * d:
            ray[j - d] = -1.0
        col = body[:q, j]
        for i in range(q):
            bi = tab.basis[i]
            if bi < d:
                ray[bi] -= col[i]
            elif bi < 2 * d:
                ray[bi - d] += col[i]
        # the ray decreases the internal minimization cost, which improves
        # the stated objective for either sense
        return LpResult(status="unbounded", x=x, ray=ray, iterations=tab.iterations)

    value_min = -body[q, -1]
    # Row duals equal the slack columns' reduced costs (>= 0, complementary).
    # Stationarity convention: G'y = c for sense "max", G'y = -c for "min".
    y = np.maximum(body[q, 2 * d : 2 * d + q], 0.0)
    if sense == "max":
        return LpResult(status="optimal", x=x, value=-value_min, y=y, iterations=tab.iterations)
    return LpResult(status="optimal", x=x, value=value_min, y=y, iterations=tab.iterations)


def feasible_point(G, h):
    """Find x with G x <= h, or report infeasibility with a Farkas ray.

    Returns (x, None) when feasible, (None, farkas) otherwise.  Uses the
    auxiliary LP  min s  s.t.  G x - 1 s <= h, s >= 0; substituting
    s = s' + s0 with s0 = max(0, -min h) + 1 makes every right-hand side
    positive, so the slack basis is immediately feasible and no phase-1
    artificials are needed.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float).ravel()
    q, d = G.shape
    if q == 0:
        return np.zeros(d), None
    if np.all(h >= 0.0):
        return np.zeros(d), None
    s0 = max(0.0, -float(h.min())) + 1.0
    Ga = np.vstack([np.hstack([G, -np.ones((q, 1))]),
                    np.append(np.zeros(d), -1.0)])
    ha = np.append(h + s0, s0)
    c = np.append(np.zeros(d), -1.0)
    res = solve_lp(c, Ga, ha, sense="max")
    assert res.status == "optimal"  # feasible at (0, 0), bounded by s' >= -s0
    s_star = s0 - res.value
    if s_star <= 1e-9:
        return res.x[:d], None
    y = res.y[:q]
    return None, y
