"""Terminal constraint set in the augmented (nominal state, theta) space.

Under the terminal law u = M2 theta + K_inf (x - M1 theta) the nominal
state converges to M1 theta while theta stays constant, so admissibility
of the whole tail reduces to finitely many constraint iterates.  The
recursion adds the base rows evaluated along the augmented dynamics
until every new row is redundant (an LP per row); a configurable arena
box plus (1-eps)-tightened steady-state rows keep the set bounded and
the determination index small.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptySetError,
    FiniteDeterminationError,
    InvalidArgumentError,
)
from .polytope import Box, HPolytope, is_redundant, scale_set, support

_DEDUPE_DECIMALS = 12


@dataclass(frozen=True)
class AugmentedDynamics:
    """Block matrix [[A + B K_inf, B M2 - B K_inf M1], [0, I]]."""

    A_aug: np.ndarray
    n: int
    n_theta: int

    @classmethod
    def build(cls, sys, ssp, K_inf):
        A_K = sys.A + sys.B @ K_inf
        Bd = sys.B @ ssp.M2 - sys.B @ K_inf @ ssp.M1
        n, n_theta = sys.n, ssp.n_theta
        top = np.hstack([A_K, Bd])
        bottom = np.hstack([np.zeros((n_theta, n)), np.eye(n_theta)])
        return cls(A_aug=np.vstack([top, bottom]), n=n, n_theta=n_theta)

    @property
    def A_K(self):
        return self.A_aug[: self.n, : self.n]

    @property
    def Bd(self):
        return self.A_aug[: self.n, self.n :]

    def predicted_state(self, xbar, theta, gamma):
        """Closed-form state after gamma steps of the terminal dynamics."""
        if gamma < 0:
            raise InvalidArgumentError("gamma must be nonnegative")
        xbar = np.asarray(xbar, dtype=float).ravel()
        theta = np.asarray(theta, dtype=float).ravel()
        x = xbar.copy()
        drift = self.Bd @ theta
        for _ in range(gamma):
            x = self.A_K @ x + drift
        return x


@dataclass(frozen=True)
class TerminalSet:
    omega: HPolytope
    gamma_star: int
    epsilon: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidArgumentError("epsilon must lie in (0, 1)")
        if self.gamma_star < 0:
            raise InvalidArgumentError("gamma_star must be nonnegative")

    def to_dict(self):
        return {"omega": self.omega.to_dict(), "gamma_star": self.gamma_star,
                "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, data):
        return cls(HPolytope.from_dict(data["omega"]), int(data["gamma_star"]),
                   float(data["epsilon"]))


def _lift_theta_rows(normals_theta, offsets, n):
    """Rows acting only on theta, embedded into (xbar, theta) space."""
    q = normals_theta.shape[0]
    return np.hstack([np.zeros((q, n)), normals_theta]), offsets


def build_o_eps(ssp, X_t, U_t, eps):
    """Steady-state admissibility rows M1 th in (1-eps) X_t, M2 th in (1-eps) U_t.

    Returned lifted to (xbar, theta) with zero state coefficients; rows
    whose normal vanishes (e.g. M2 = 0) are dropped when trivially true
    and rejected as inconsistent otherwise.  Returns None when no row
    survives.
    """
    if not 0.0 < eps < 1.0:
        raise InvalidArgumentError("eps must lie in (0, 1)")
    n = ssp.M1.shape[0]
    Xs = scale_set(X_t, 1.0 - eps)
    Us = scale_set(U_t, 1.0 - eps)
    rows = np.vstack([Xs.normals @ ssp.M1, Us.normals @ ssp.M2])
    offs = np.concatenate([Xs.offsets, Us.offsets])
    keep = np.linalg.norm(rows, axis=1) > 1e-14
    dropped = ~keep
    if np.any(offs[dropped] < 0.0):
        raise EmptySetError("steady-state admissibility rows are inconsistent")
    if not keep.any():
        return None
    lifted, offs = _lift_theta_rows(rows[keep], offs[keep], n)
    return HPolytope(lifted, offs)


def _row_key(normal, offset):
    norm = np.linalg.norm(normal)
    return (tuple(np.round(normal / norm, _DEDUPE_DECIMALS)),
            round(offset / norm, _DEDUPE_DECIMALS))


def _bounding_box(poly):
    """Axis box around a polytope, or None if any direction is unbounded."""
    d = poly.dim
    lo, hi = np.empty(d), np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        up, dn = support(poly, e), support(poly, -e)
        if not (np.isfinite(up) and np.isfinite(dn)):
            return None
        hi[i], lo[i] = up, -dn
    return Box(0.5 * (lo + hi), 0.5 * (hi - lo))


def gilbert_tan(aug, base, gamma_cap=200, tol=1e-9):
    """Largest set whose whole terminal-dynamics trajectory satisfies ``base``.

    Iterates O_{g+1} = O_g intersect {z : base rows at A_aug^{g+1} z} and
    stops at the first g where every new row is redundant (one LP each,
    after duplicate hashing and a bounding-box prefilter).  Returns
    (O_{g*}, g*).
    """
    A_aug = aug.A_aug if isinstance(aug, AugmentedDynamics) else np.asarray(aug, dtype=float)
    rows = [base.normals[i] for i in range(base.nrows)]
    offs = list(base.offsets)
    seen = {_row_key(r, o) for r, o in zip(rows, offs)}

    current = HPolytope(np.array(rows), np.array(offs))
    box = _bounding_box(current)
    power = A_aug.copy()

    for gamma in range(gamma_cap + 1):
        cand_rows = base.normals @ power
        added = 0
        for i in range(cand_rows.shape[0]):
            row, off = cand_rows[i], base.offsets[i]
            norm = np.linalg.norm(row)
            if norm <= 1e-14:
                if off < -tol:
                    raise FiniteDeterminationError(
                        "a constraint row vanished with negative offset", offending_row=i)
                continue
            key = _row_key(row, off)
            if key in seen:
                continue
            if box is not None:
                bound = row @ box.center + np.abs(row) @ box.half_widths
                if bound <= off + tol:
                    seen.add(key)
                    continue
            if is_redundant(row, off, current, tol=tol):
                seen.add(key)
                continue
            rows.append(row)
            offs.append(off)
            seen.add(key)
            added += 1
        if added == 0:
            return current, gamma
        current = HPolytope(np.array(rows), np.array(offs))
        power = power @ A_aug

    raise FiniteDeterminationError(
        f"admissible-set recursion still adding rows at gamma = {gamma_cap}",
        offending_row=None)


def build_terminal(sys, ssp, riccati, X_t, U_t, eps, arena_x, arena_theta,
                   gamma_cap=200, tol=1e-9):
    """Assemble the terminal set: steady-state rows + admissible-set recursion.

    arena_x / arena_theta are positive bound vectors boxing the augmented
    space; they guarantee boundedness (and thus finite determination) and
    their steady-state images are (1-eps)-tightened like the constraint
    rows so the recursion terminates quickly.
    """
    aug = AugmentedDynamics.build(sys, ssp, riccati.K_inf)
    n, n_theta = aug.n, aug.n_theta
    arena_x = np.asarray(arena_x, dtype=float).ravel()
    arena_theta = np.asarray(arena_theta, dtype=float).ravel()
    if arena_x.size != n or arena_theta.size != n_theta:
        raise InvalidArgumentError("arena bound sizes must match (n, n_theta)")
    if np.any(arena_x <= 0.0) or np.any(arena_theta <= 0.0):
        raise InvalidArgumentError("arena bounds must be positive")

    blocks = []

    # step-0 state rows and input rows under the terminal law
    blocks.append((np.hstack([X_t.normals, np.zeros((X_t.nrows, n_theta))]), X_t.offsets))
    Kn = U_t.normals @ riccati.K_inf
    Tn = U_t.normals @ (ssp.M2 - riccati.K_inf @ ssp.M1)
    blocks.append((np.hstack([Kn, Tn]), U_t.offsets))

    o_eps = build_o_eps(ssp, X_t, U_t, eps)
    if o_eps is not None:
        blocks.append((o_eps.normals, o_eps.offsets))

    # arena rows on the state, their tightened steady-state images, and the
    # theta box
    eye_n = np.eye(n)
    blocks.append((np.hstack([np.vstack([eye_n, -eye_n]), np.zeros((2 * n, n_theta))]),
                   np.concatenate([arena_x, arena_x])))
    steady = np.vstack([ssp.M1, -ssp.M1])
    keep = np.linalg.norm(steady, axis=1) > 1e-14
    if keep.any():
        lifted, offs = _lift_theta_rows(steady[keep],
                                        (1.0 - eps) * np.concatenate([arena_x, arena_x])[keep], n)
        blocks.append((lifted, offs))
    eye_t = np.eye(n_theta)
    lifted, offs = _lift_theta_rows(np.vstack([eye_t, -eye_t]),
                                    np.concatenate([arena_theta, arena_theta]), n)
    blocks.append((lifted, offs))

    normals = np.vstack([b[0] for b in blocks])
    offsets = np.concatenate([b[1] for b in blocks])
    # drop duplicate base rows up front
    uniq_idx = []
    seen = set()
    for i in range(normals.shape[0]):
        key = _row_key(normals[i], offsets[i])
        if key not in seen:
            seen.add(key)
            uniq_idx.append(i)
    base = HPolytope(normals[uniq_idx], offsets[uniq_idx])

    omega, gamma_star = gilbert_tan(aug, base, gamma_cap=gamma_cap, tol=tol)
    if not omega.contains_origin():
        raise EmptySetError("terminal set does not contain the origin")
    return TerminalSet(omega=omega, gamma_star=gamma_star, epsilon=eps), aug
