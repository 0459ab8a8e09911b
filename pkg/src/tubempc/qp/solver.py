"""Dense convex QP solving with verifiable optimality contracts.

The algorithm is a primal active-set method.  A solver instance is bound
to a fixed (H, G) pair and caches the factorization products, so
repeated solves that only change f and h (the MPC per-step pattern) cost
a handful of small matrix operations.  Instances carry warm-start
memory and are single-user; distinct instances share nothing mutable.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgumentError
from .backend import KERNEL
from .simplex import feasible_point

_STEP_TOL = 1e-9
_LAM_TOL = 1e-10
_ACTIVE_TOL = 1e-9


@dataclass(frozen=True)
class QuadProgram:
    """min 1/2 z'Hz + f'z  s.t.  G z <= h, with H symmetric PSD."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        f = np.asarray(self.f, dtype=float).ravel()
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        d = f.size
        if H.shape != (d, d):
            raise InvalidArgumentError("H must be d x d")
        if G.size == 0:
            G = np.zeros((0, d))
        if G.shape[1] != d or h.size != G.shape[0]:
            raise InvalidArgumentError("inconsistent constraint dimensions")
        for arr in (H, f, G, h):
            if not np.isfinite(arr).all():
                raise InvalidArgumentError("QP data must be finite")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H))):
            raise InvalidArgumentError("H must be symmetric (within 1e-10)")
        object.__setattr__(self, "H", 0.5 * (H + H.T))
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def dim(self):
        return self.f.size

    def objective(self, z):
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSolution:
    z_star: np.ndarray | None
    status: str  # "optimal" | "infeasible" | "max_iter"
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    duality_gap_estimate: float = np.nan
    iterations: int = 0
    lam: np.ndarray | None = None
    certificate: np.ndarray | None = None
    regularized: bool = False
    active_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))


class ActiveSetSolver:
    """Active-set solver bound to a fixed (H, G); f and h vary per solve."""

    def __init__(self, H, G, eps_feas=1e-8, eps_opt=1e-8):
        H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
        G = np.atleast_2d(np.asarray(G, dtype=float))
        d = H.shape[0]
        if G.size == 0:
            G = np.zeros((0, d))
        self.eps_feas = eps_feas
        self.eps_opt = eps_opt
        self.H = H
        self.G = G
        self.d = d
        self.q = G.shape[0]
        self.regularized = False
        self._chol, ridge = self._factor(H)
        # row-normalized constraint system for conditioning
        norms = np.linalg.norm(G, axis=1)
        if self.q and np.any(norms == 0.0):
            raise InvalidArgumentError("zero row in G")
        self._row_norms = norms
        self.Gn = np.ascontiguousarray(G / norms[:, None]) if self.q else G
        # the kernel works on the (possibly ridge-regularized) Hessian;
        # residuals are still reported against the original data
        self._Hc = np.ascontiguousarray(H + ridge * np.eye(d)) if ridge else np.ascontiguousarray(H)
        self.warm_z = None
        self.warm_active = np.zeros(0, dtype=np.intp)

    def _factor(self, H):
        scale = max(1.0, float(np.trace(H)) / max(1, H.shape[0]))
        try:
            return np.linalg.cholesky(H), 0.0
        except np.linalg.LinAlgError:
            pass
        for ridge in (1e-12 * scale, 1e-10 * scale, 1e-8 * scale):
            try:
                chol = np.linalg.cholesky(H + ridge * np.eye(H.shape[0]))
            except np.linalg.LinAlgError:
                continue
            self.regularized = True
            return chol, ridge
        raise InvalidArgumentError("H is not positive semidefinite")

    def _chol_solve(self, rhs):
        y = np.linalg.solve(self._chol, rhs)
        return np.linalg.solve(self._chol.T, y)

    def _initial_active(self, z, hn):
        """Rows active at z, lowest indices first, at most d of them."""
        resid = hn - self.Gn @ z
        return [int(i) for i in np.flatnonzero(resid <= _ACTIVE_TOL)[: self.d]]

    def solve(self, f, h, z0=None, active0=None, max_iter=None):
        f = np.asarray(f, dtype=float).ravel()
        h = np.asarray(h, dtype=float).ravel()
        if f.size != self.d or h.size != self.q:
            raise InvalidArgumentError("inconsistent solve dimensions")
        if not (np.isfinite(f).all() and np.isfinite(h).all()):
            raise InvalidArgumentError("QP data must be finite")
        if max_iter is None:
            max_iter = max(200, 10 * self.d + 2 * self.q)

        if self.q == 0:
            z = -self._chol_solve(f)
            sol = QpSolution(z_star=z, status="optimal", iterations=0, lam=np.zeros(0))
            self._finalize(sol, f, h)
            return sol

        hn = h / self._row_norms
        scale = 1.0 + float(np.max(np.abs(h)))

        z = None
        Gz = None
        warm_hint = None
        if z0 is not None:
            z0 = np.asarray(z0, dtype=float).ravel()
            cand = self.Gn @ z0
            if np.max(cand - hn) <= 1e-10 * scale:
                z, Gz = z0.copy(), cand
                warm_hint = active0
        if z is None and self.warm_z is not None:
            cand = self.Gn @ self.warm_z
            if np.max(cand - hn) <= 1e-10 * scale:
                z, Gz = self.warm_z.copy(), cand
                warm_hint = self.warm_active if active0 is None else active0
        if z is None:
            point, farkas = feasible_point(self.G, h)
            if point is None:
                return QpSolution(z_star=None, status="infeasible", certificate=farkas)
            z = point
            Gz = self.Gn @ z
            warm_hint = active0

        if warm_hint is not None:
            # rows from a previous optimum: an activity filter suffices, the
            # QR-based kernel tolerates near-dependent working sets
            act = [int(i) for i in warm_hint if hn[i] - Gz[i] <= _ACTIVE_TOL][: self.d]
        else:
            act = self._initial_active(z, hn)

        status, iters, active, lam_n = KERNEL.asqp_kernel(
            z, self._Hc, np.ascontiguousarray(f), self.Gn, hn,
            np.asarray(act, dtype=np.intp), int(max_iter), _STEP_TOL, _LAM_TOL,
        )

        lam = np.zeros(self.q)
        if len(active):
            lam[np.asarray(active, dtype=np.intp)] = np.asarray(lam_n) / self._row_norms[np.asarray(active, dtype=np.intp)]
        np.maximum(lam, 0.0, out=lam)

        sol = QpSolution(
            z_star=z,
            status="optimal" if status == 0 else "max_iter",
            iterations=int(iters),
            lam=lam,
            regularized=self.regularized,
            active_set=np.asarray(active, dtype=np.intp),
        )
        self._finalize(sol, f, h)
        if sol.status == "optimal":
            self.warm_z = z.copy()
            self.warm_active = sol.active_set.copy()
        return sol

    def _finalize(self, sol, f, h):
        z = sol.z_star
        lam = sol.lam if sol.lam is not None else np.zeros(self.q)
        resid = self.G @ z - h if self.q else np.zeros(0)
        sol.primal_residual = float(np.max(resid, initial=0.0))
        grad = self.H @ z + f + (self.G.T @ lam if self.q else 0.0)
        sol.dual_residual = float(np.max(np.abs(grad), initial=0.0))
        sol.duality_gap_estimate = float(np.abs(lam @ resid)) if self.q else 0.0
        if sol.status == "optimal":
            if sol.primal_residual > self.eps_feas or sol.dual_residual > self.eps_opt:
                sol.status = "max_iter"


def solve_qp(program, eps_feas=1e-8, eps_opt=1e-8, max_iter=None, z0=None):
    """One-shot solve of a QuadProgram; see ActiveSetSolver for the loop API."""
    solver = ActiveSetSolver(program.H, program.G, eps_feas=eps_feas, eps_opt=eps_opt)
    return solver.solve(program.f, program.h, z0=z0, max_iter=max_iter)


def kkt_check(program, sol, eps_feas=1e-8, eps_opt=1e-8, comp_tol=1e-6):
    """Independent KKT re-evaluation of an optimal solution.

    Checks stationarity, primal feasibility, dual nonnegativity, and
    complementary slackness; returns (ok, report).
    """
    z = np.asarray(sol.z_star, dtype=float)
    lam = np.asarray(sol.lam, dtype=float)
    resid = program.G @ z - program.h if program.G.size else np.zeros(0)
    stationarity = program.H @ z + program.f
    if program.G.size:
        stationarity = stationarity + program.G.T @ lam
    report = {
        "stationarity": float(np.max(np.abs(stationarity), initial=0.0)),
        "primal": float(np.max(resid, initial=0.0)),
        "dual_nonneg": float(np.min(lam, initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * resid), initial=0.0)),
    }
    ok = (
        report["stationarity"] <= eps_opt * 10
        and report["primal"] <= eps_feas
        and report["dual_nonneg"] >= -1e-10
        and report["complementarity"] <= comp_tol
    )
    return ok, report
