"""Tube MPC for tracking with an artificial steady-state reference.

Offline, ``precompute`` assembles every set-theoretic and Riccati
ingredient plus the condensed prediction matrices; online, a
``TrackingController`` solves one dense QP per step over the decision
vector z = (theta, xbar_0, ubar_0..ubar_{N-1}) and applies

    u = ubar_0* + K (x - xbar_0*).

A conventional fixed-target tube controller over z = (xbar_0, ubar) is
provided as the comparison baseline, together with the projected-target
problem and the convergence-bound diagnostics used by the closed-loop
analysis.
"""

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionViolatedError,
    InfeasibleError,
    InvalidArgumentError,
    NoSteadyStateError,
    SolverFailureError,
    StructureError,
)
from .lti import LTISystem, RiccatiResult, dare_solve, is_schur, steady_state_param
from .polytope import Box, HPolytope, support
from .qp.solver import ActiveSetSolver, QuadProgram, solve_qp
from .rpi import RPIApprox, block_facets, detect_blocks, image_set, rakovic_approx
from .terminal import AugmentedDynamics, TerminalSet, build_terminal
from .polytope import pontryagin_diff

ARTIFACT_VERSION = 1


def _sym(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _check_psd(M, name, strict=False):
    eig = np.linalg.eigvalsh(_sym(M))
    if strict and eig.min() <= 0.0:
        raise InvalidArgumentError(f"{name} must be positive definite")
    if not strict and eig.min() < -1e-10 * max(1.0, eig.max()):
        raise InvalidArgumentError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class Weights:
    """Cost matrices; Q_N is always the Riccati solution, filled offline."""

    Q_x: np.ndarray
    Q_u: np.ndarray
    Q_r: np.ndarray
    Q_sx: np.ndarray
    Q_su: np.ndarray
    Q_N: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "Q_x", _sym(self.Q_x))
        object.__setattr__(self, "Q_u", _sym(self.Q_u))
        object.__setattr__(self, "Q_r", _sym(self.Q_r))
        object.__setattr__(self, "Q_sx", _sym(self.Q_sx))
        object.__setattr__(self, "Q_su", _sym(self.Q_su))
        if self.Q_N is not None:
            object.__setattr__(self, "Q_N", _sym(self.Q_N))
        _check_psd(self.Q_x, "Q_x")
        _check_psd(self.Q_u, "Q_u", strict=True)
        _check_psd(self.Q_r, "Q_r", strict=True)
        _check_psd(self.Q_sx, "Q_sx")
        _check_psd(self.Q_su, "Q_su")

    def with_terminal(self, Q_N):
        return Weights(self.Q_x, self.Q_u, self.Q_r, self.Q_sx, self.Q_su, Q_N)

    def to_dict(self):
        out = {k: getattr(self, k).tolist() for k in ("Q_x", "Q_u", "Q_r", "Q_sx", "Q_su")}
        out["Q_N"] = None if self.Q_N is None else self.Q_N.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: (None if data[k] is None else np.asarray(data[k], dtype=float))
                      for k in ("Q_x", "Q_u", "Q_r", "Q_sx", "Q_su", "Q_N")})


def steady_bias_margin(weights, ssp):
    """lambda_min(L'Q_r L) - lambda_max(M1'Q_sx M1) - lambda_max(M2'Q_su M2).

    Positive margin is the weight condition under which the distance of
    the limiting parameter to the projected target is bounded.
    """
    lmin = float(np.linalg.eigvalsh(_sym(ssp.L.T @ weights.Q_r @ ssp.L)).min())
    a1 = float(np.linalg.eigvalsh(_sym(ssp.M1.T @ weights.Q_sx @ ssp.M1)).max())
    a2 = float(np.linalg.eigvalsh(_sym(ssp.M2.T @ weights.Q_su @ ssp.M2)).max()) if ssp.M2.size else 0.0
    return lmin - a1 - a2


def steady_theta_for_reference(ssp, r):
    """Least-squares parameter with L theta closest to r."""
    r = np.asarray(r, dtype=float).ravel()
    theta, *_ = np.linalg.lstsq(ssp.L, r, rcond=None)
    return theta


@dataclass
class ControllerArtifacts:
    """All offline products of the tracking controller; immutable in use."""

    sys: LTISystem
    ssp: object
    weights: Weights
    N: int
    K_tube: np.ndarray
    riccati: RiccatiResult
    F: RPIApprox
    F_facets: HPolytope
    X: HPolytope
    U: HPolytope
    X_t: HPolytope
    U_t: HPolytope
    terminal: TerminalSet
    aug: AugmentedDynamics
    arena_x: np.ndarray
    arena_theta: np.ndarray
    eps: float
    facet_fallback: bool = False
    bias_margin: float = 0.0
    provenance: dict = field(default_factory=dict)
    # condensed templates, rebuilt on load
    _cond: dict = field(default=None, repr=False, compare=False)

    @property
    def dims(self):
        n, p = self.sys.n, self.sys.p
        return {"n": n, "p": p, "n_theta": self.ssp.n_theta,
                "d": self.ssp.n_theta + n + self.N * p}

    def condensed(self):
        if self._cond is None:
            self._cond = _condense(self)
        return self._cond

    def to_dict(self):
        return {
            "version": ARTIFACT_VERSION,
            "kind": "tracking",
            "sys": self.sys.to_dict(),
            "ssp": self.ssp.to_dict(),
            "weights": self.weights.to_dict(),
            "N": self.N,
            "K_tube": self.K_tube.tolist(),
            "riccati": self.riccati.to_dict(),
            "rpi": self.F.to_dict(),
            "F_facets": self.F_facets.to_dict(),
            "X": self.X.to_dict(),
            "U": self.U.to_dict(),
            "X_t": self.X_t.to_dict(),
            "U_t": self.U_t.to_dict(),
            "terminal": self.terminal.to_dict(),
            "arena_x": self.arena_x.tolist(),
            "arena_theta": self.arena_theta.tolist(),
            "eps": self.eps,
            "facet_fallback": self.facet_fallback,
            "bias_margin": self.bias_margin,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        from .lti import SteadyStateParam

        if data.get("version") != ARTIFACT_VERSION:
            raise InvalidArgumentError("unsupported artifact version")
        sys = LTISystem.from_dict(data["sys"])
        ssp = SteadyStateParam.from_dict(data["ssp"])
        riccati = RiccatiResult.from_dict(data["riccati"])
        art = cls(
            sys=sys,
            ssp=ssp,
            weights=Weights.from_dict(data["weights"]),
            N=int(data["N"]),
            K_tube=np.asarray(data["K_tube"], dtype=float),
            riccati=riccati,
            F=RPIApprox.from_dict(data["rpi"]),
            F_facets=HPolytope.from_dict(data["F_facets"]),
            X=HPolytope.from_dict(data["X"]),
            U=HPolytope.from_dict(data["U"]),
            X_t=HPolytope.from_dict(data["X_t"]),
            U_t=HPolytope.from_dict(data["U_t"]),
            terminal=TerminalSet.from_dict(data["terminal"]),
            aug=AugmentedDynamics.build(sys, ssp, riccati.K_inf),
            arena_x=np.asarray(data["arena_x"], dtype=float),
            arena_theta=np.asarray(data["arena_theta"], dtype=float),
            eps=float(data["eps"]),
            facet_fallback=bool(data["facet_fallback"]),
            bias_margin=float(data["bias_margin"]),
            provenance=dict(data.get("provenance", {})),
        )
        return art

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        msg = exc.args[0] if exc.args else ""
        exc.args = (f"offline stage '{name}': {msg}",) + tuple(exc.args[1:])
        raise


def precompute(sys, X, U, W, weights, N, eps=0.01, K_tube=None,
               alpha_target=0.05, eta=None, s_cap=500,
               arena_x=None, arena_theta=None, gamma_cap=200,
               provenance=None):
    """Run every offline stage and assemble the controller artifacts."""
    if N < 1:
        raise InvalidArgumentError("horizon N must be at least 1")
    if not X.contains_origin() or not U.contains_origin():
        raise InvalidArgumentError("constraint sets must contain the origin")
    if not isinstance(W, Box):
        raise InvalidArgumentError("W must be a Box")
    if not W.is_centered(tol=0.0):
        raise InvalidArgumentError(
            "disturbance box must be centered at the origin: the tube containment "
            "constraint relies on the symmetry of the invariant set")

    riccati = _stage("riccati", dare_solve, sys, weights.Q_x, weights.Q_u)
    weights = weights.with_terminal(riccati.Q_N)
    K = riccati.K_inf if K_tube is None else np.asarray(K_tube, dtype=float)
    A_K = sys.A + sys.B @ K
    if not is_schur(A_K):
        raise InvalidArgumentError("A + B K_tube must be Schur")

    ssp = _stage("steady-state", steady_state_param, sys)
    rpi = _stage("invariant-set", rakovic_approx, A_K, W,
                 alpha_target=alpha_target, eta=eta, s_cap=s_cap)
    X_t = _stage("state-tightening", pontryagin_diff, X, rpi.F)
    U_t = _stage("input-tightening", pontryagin_diff, U, image_set(K, rpi.F))

    facet_fallback = False
    try:
        facets = _stage("tube-facets", block_facets, rpi.F, detect_blocks(A_K))
    except StructureError:
        # conservative outer box; the containment rows of the online problem
        # then over-admit initial nominal states and the tube guarantee is
        # only approximate
        warnings.warn("tube dynamics are not block-decoupled; falling back to "
                      "the bounding box of the invariant set (containment rows "
                      "are outer approximations)", stacklevel=2)
        facet_fallback = True
        n = sys.n
        rows = np.vstack([np.eye(n), -np.eye(n)])
        offs = np.array([support(rpi.F, row) for row in rows])
        facets = HPolytope(rows, offs)

    if arena_x is None:
        arena_x = 10.0 * np.ones(sys.n)
    if arena_theta is None:
        arena_theta = 10.0 * np.ones(ssp.n_theta)
    terminal, aug = _stage("terminal-set", build_terminal, sys, ssp, riccati,
                           X_t, U_t, eps, arena_x, arena_theta, gamma_cap)

    art = ControllerArtifacts(
        sys=sys, ssp=ssp, weights=weights, N=N, K_tube=K, riccati=riccati,
        F=rpi, F_facets=facets, X=X, U=U, X_t=X_t, U_t=U_t,
        terminal=terminal, aug=aug,
        arena_x=np.asarray(arena_x, dtype=float),
        arena_theta=np.asarray(arena_theta, dtype=float),
        eps=eps, facet_fallback=facet_fallback,
        bias_margin=steady_bias_margin(weights, ssp),
        provenance=provenance or {},
    )
    art.condensed()  # assemble and sanity-check the online templates
    return art


def _condense(art):
    """Prediction stacks, cost templates, and constraint templates in z."""
    sys, ssp, w, N = art.sys, art.ssp, art.weights, art.N
    n, p, nth = sys.n, sys.p, ssp.n_theta
    d = nth + n + N * p

    A_pow = [np.eye(n)]
    for _ in range(N):
        A_pow.append(sys.A @ A_pow[-1])

    def state_map(k):
        M = np.zeros((n, d))
        M[:, nth:nth + n] = A_pow[k]
        for j in range(k):
            M[:, nth + n + j * p: nth + n + (j + 1) * p] = A_pow[k - 1 - j] @ sys.B
        return M

    def input_map(k):
        M = np.zeros((p, d))
        M[:, nth + n + k * p: nth + n + (k + 1) * p] = np.eye(p)
        return M

    theta_map = np.zeros((nth, d))
    theta_map[:, :nth] = np.eye(nth)

    H = np.zeros((d, d))
    for k in range(N):
        Dk = state_map(k) - ssp.M1 @ theta_map
        H += Dk.T @ w.Q_x @ Dk
        Uk = input_map(k) - ssp.M2 @ theta_map
        H += Uk.T @ w.Q_u @ Uk
    DN = state_map(N) - ssp.M1 @ theta_map
    H += DN.T @ w.Q_N @ DN
    Rmap = ssp.L @ theta_map
    H += Rmap.T @ w.Q_r @ Rmap
    Sx = ssp.M1 @ theta_map
    Su = ssp.M2 @ theta_map
    H += Sx.T @ w.Q_sx @ Sx
    H += Su.T @ w.Q_su @ Su
    H *= 2.0
    _check_psd(H, "condensed Hessian")

    f_r = -2.0 * Rmap.T @ w.Q_r
    f_xd = -2.0 * Sx.T @ w.Q_sx
    f_ud = -2.0 * Su.T @ w.Q_su

    # constraint rows: tube containment | state | input | terminal
    Fn, Fb = art.F_facets.normals, art.F_facets.offsets
    rows_tube = np.zeros((Fn.shape[0], d))
    rows_tube[:, nth:nth + n] = Fn

    rows_state = np.vstack([art.X_t.normals @ state_map(k) for k in range(N)])
    offs_state = np.tile(art.X_t.offsets, N)
    rows_input = np.vstack([art.U_t.normals @ input_map(k) for k in range(N)])
    offs_input = np.tile(art.U_t.offsets, N)

    Wn = art.terminal.omega.normals
    rows_term = Wn[:, :n] @ state_map(N) + Wn[:, n:] @ theta_map
    offs_term = art.terminal.omega.offsets

    G = np.vstack([rows_tube, rows_state, rows_input, rows_term])
    h_const = np.concatenate([Fb, offs_state, offs_input, offs_term])

    return {
        "d": d,
        "A_pow": A_pow,
        "state_map_N": state_map(N),
        "H": H,
        "f_r": f_r, "f_xd": f_xd, "f_ud": f_ud,
        "G": G,
        "h_const": h_const,
        "tube_rows": slice(0, Fn.shape[0]),
        "Fn": Fn, "Fb": Fb,
        "theta_map": theta_map,
    }


def _linear_term(art, r, x_des, u_des):
    c = art.condensed()
    w = art.weights
    r = np.asarray(r, dtype=float).ravel()
    x_des = np.asarray(x_des, dtype=float).ravel()
    u_des = np.asarray(u_des, dtype=float).ravel()
    f = c["f_r"] @ r + c["f_xd"] @ x_des + c["f_ud"] @ u_des
    const = float(r @ w.Q_r @ r + x_des @ w.Q_sx @ x_des + u_des @ w.Q_su @ u_des)
    return f, const


def _h_vector(art, x_t):
    c = art.condensed()
    h = c["h_const"].copy()
    h[c["tube_rows"]] = c["Fb"] + c["Fn"] @ np.asarray(x_t, dtype=float).ravel()
    return h


def build_qp(art, x_t, r, x_des, u_des):
    """The per-step quadratic program as an inspectable QuadProgram."""
    c = art.condensed()
    f, _ = _linear_term(art, r, x_des, u_des)
    return QuadProgram(H=c["H"], f=f, G=c["G"], h=_h_vector(art, x_t))


def split_decision(art, z):
    """(theta, xbar_0, input sequence (N, p)) from the stacked decision."""
    n, p, nth = art.sys.n, art.sys.p, art.ssp.n_theta
    theta = z[:nth]
    x0 = z[nth:nth + n]
    u_seq = z[nth + n:].reshape(art.N, p)
    return theta, x0, u_seq


@dataclass
class StepResult:
    u_applied: np.ndarray
    theta_star: np.ndarray
    x0_star: np.ndarray
    u_seq_star: np.ndarray
    cost_star: float
    qp_stats: dict


class TrackingController:
    """Per-run online state: QP solver with warm start and candidate shift."""

    def __init__(self, art, eps_feas=1e-8, eps_opt=1e-8):
        self.art = art
        c = art.condensed()
        self.solver = ActiveSetSolver(c["H"], c["G"], eps_feas=eps_feas, eps_opt=eps_opt)
        self.prev_z = None
        self.prev_active = None
        self._f_cache = None

    def reset(self):
        self.prev_z = None
        self.prev_active = None
        self.solver.warm_z = None

    def shifted_candidate(self):
        """Feasible candidate for the next step from the previous optimum."""
        if self.prev_z is None:
            return None
        art = self.art
        c = art.condensed()
        theta, x0, u_seq = split_decision(art, self.prev_z)
        xN = c["state_map_N"] @ self.prev_z
        kappa = art.ssp.M2 @ theta + art.riccati.K_inf @ (xN - art.ssp.M1 @ theta)
        x0_next = art.sys.A @ x0 + art.sys.B @ u_seq[0]
        return np.concatenate([theta, x0_next, u_seq[1:].ravel(), kappa])

    def _cold_candidate(self, x_t):
        """Terminal-law rollout from x_t for any theta with (x_t, theta)
        in the terminal set (found by a small LP over theta)."""
        from .qp.simplex import feasible_point

        art = self.art
        n = art.sys.n
        omega = art.terminal.omega
        theta_c, _ = feasible_point(omega.normals[:, n:],
                                    omega.offsets - omega.normals[:, :n] @ x_t)
        if theta_c is None:
            return None
        M1, M2, Kinf = art.ssp.M1, art.ssp.M2, art.riccati.K_inf
        xs = M1 @ theta_c
        xk = x_t.copy()
        inputs = np.empty((art.N, art.sys.p))
        for k in range(art.N):
            inputs[k] = M2 @ theta_c + Kinf @ (xk - xs)
            xk = art.sys.A @ xk + art.sys.B @ inputs[k]
        return np.concatenate([theta_c, x_t, inputs.ravel()])

    def control_step(self, x_t, r, x_des, u_des):
        """Solve the step QP at state x_t and return the applied input."""
        t0 = time.perf_counter()
        art = self.art
        x_t = np.asarray(x_t, dtype=float).ravel()
        f, const = self._linear(r, x_des, u_des)
        h = _h_vector(art, x_t)

        candidate = self.shifted_candidate()
        cand_feasible = None
        if candidate is not None:
            cand_feasible = bool(np.max(art.condensed()["G"] @ candidate - h) <= 1e-8)
        else:
            candidate = self._cold_candidate(x_t)

        sol = self.solver.solve(f, h, z0=candidate, active0=self.prev_active)
        if sol.status == "infeasible":
            raise InfeasibleError("step problem infeasible", certificate=sol.certificate)
        if sol.status != "optimal":
            raise SolverFailureError(f"QP solver returned status '{sol.status}'")

        z = sol.z_star
        theta, x0, u_seq = split_decision(art, z)
        u = u_seq[0] + art.K_tube @ (x_t - x0)
        cost = 0.5 * z @ art.condensed()["H"] @ z + f @ z + const
        self.prev_z = z
        self.prev_active = sol.active_set
        stats = {
            "iterations": sol.iterations,
            "status": sol.status,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "candidate_feasible": cand_feasible,
            "input_violation": float(np.max(art.U.normals @ u - art.U.offsets)),
            "solve_seconds": time.perf_counter() - t0,
        }
        return StepResult(u_applied=u, theta_star=theta.copy(), x0_star=x0.copy(),
                          u_seq_star=u_seq.copy(), cost_star=float(cost), qp_stats=stats)

    def _linear(self, r, x_des, u_des):
        key = (np.asarray(r, dtype=float).tobytes(),
               np.asarray(x_des, dtype=float).tobytes(),
               np.asarray(u_des, dtype=float).tobytes())
        if self._f_cache is None or self._f_cache[0] != key:
            f, const = _linear_term(self.art, r, x_des, u_des)
            self._f_cache = (key, f, const)
        return self._f_cache[1], self._f_cache[2]

    def quick_feasible(self, x_t, thetas):
        """Sufficient feasibility test: some (x_t, theta) lies in the terminal set.

        The candidate (theta, xbar_0 = x_t, terminal-law rollout) then
        satisfies every constraint of the step problem.
        """
        omega = self.art.terminal.omega
        x_t = np.asarray(x_t, dtype=float).ravel()
        for theta in thetas:
            z = np.concatenate([x_t, theta])
            if np.max(omega.normals @ z - omega.offsets) <= 0.0:
                return True
        return False

    def is_feasible(self, x_t, r, x_des, u_des):
        """Exact feasibility of the step problem (LP decision, no warm state)."""
        from .qp.simplex import feasible_point

        h = _h_vector(self.art, x_t)
        point, _ = feasible_point(self.art.condensed()["G"], h)
        return point is not None


@dataclass
class BaselineArtifacts:
    """Conventional tube MPC toward one fixed admissible steady pair."""

    art: ControllerArtifacts
    x_target: np.ndarray
    u_target: np.ndarray
    theta_target: np.ndarray
    moas: HPolytope
    gamma_star: int
    _cond: dict = field(default=None, repr=False, compare=False)

    def condensed(self):
        if self._cond is None:
            self._cond = _condense_baseline(self)
        return self._cond

    def to_dict(self):
        return {
            "version": ARTIFACT_VERSION,
            "kind": "baseline",
            "tracking": self.art.to_dict(),
            "x_target": self.x_target.tolist(),
            "u_target": self.u_target.tolist(),
            "theta_target": self.theta_target.tolist(),
            "moas": self.moas.to_dict(),
            "gamma_star": self.gamma_star,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("kind") != "baseline":
            raise InvalidArgumentError("not a baseline artifact")
        return cls(
            art=ControllerArtifacts.from_dict(data["tracking"]),
            x_target=np.asarray(data["x_target"], dtype=float),
            u_target=np.asarray(data["u_target"], dtype=float),
            theta_target=np.asarray(data["theta_target"], dtype=float),
            moas=HPolytope.from_dict(data["moas"]),
            gamma_star=int(data["gamma_star"]),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def baseline_precompute(art, r, gamma_cap=200):
    """Baseline ingredients: projected admissible target + its invariant set.

    The raw steady pair for r may violate the tightened constraints (the
    reference can be unreachable), in which case a fixed-target scheme
    would be infeasible everywhere; the target is therefore the closest
    parameter whose steady pair satisfies the (1-eps)-tightened sets.
    """
    ssp = art.ssp
    theta_r = steady_theta_for_reference(ssp, r)
    nth = ssp.n_theta
    scale = 1.0 - art.eps
    rows = np.vstack([art.X_t.normals @ ssp.M1, art.U_t.normals @ ssp.M2])
    offs = np.concatenate([scale * art.X_t.offsets, scale * art.U_t.offsets])
    keep = np.linalg.norm(rows, axis=1) > 1e-14
    prog = QuadProgram(H=2.0 * np.eye(nth), f=-2.0 * theta_r,
                       G=rows[keep], h=offs[keep])
    sol = solve_qp(prog)
    if sol.status != "optimal":
        raise InfeasibleError("no admissible steady pair near the reference")
    theta_b = sol.z_star
    xs, us = ssp.M1 @ theta_b, ssp.M2 @ theta_b

    # invariant set of the shifted terminal-law dynamics around (xs, us)
    A_K = art.sys.A + art.sys.B @ art.riccati.K_inf
    n = art.sys.n
    rows = [art.X_t.normals, art.U_t.normals @ art.riccati.K_inf,
            np.vstack([np.eye(n), -np.eye(n)])]
    offs = [art.X_t.offsets - art.X_t.normals @ xs,
            art.U_t.offsets - art.U_t.normals @ us,
            np.concatenate([art.arena_x, art.arena_x])]
    base = HPolytope(np.vstack(rows), np.concatenate(offs))
    from .terminal import gilbert_tan

    moas, gamma_star = gilbert_tan(A_K, base, gamma_cap=gamma_cap)
    return BaselineArtifacts(art=art, x_target=xs, u_target=us,
                             theta_target=theta_b, moas=moas, gamma_star=gamma_star)


def _condense_baseline(base):
    art = base.art
    sys, w, N = art.sys, art.weights, art.N
    n, p = sys.n, sys.p
    d = n + N * p
    c = art.condensed()

    def state_map(k):
        M = np.zeros((n, d))
        M[:, :n] = c["A_pow"][k]
        for j in range(k):
            M[:, n + j * p: n + (j + 1) * p] = c["A_pow"][k - 1 - j] @ sys.B
        return M

    def input_map(k):
        M = np.zeros((p, d))
        M[:, n + k * p: n + (k + 1) * p] = np.eye(p)
        return M

    H = np.zeros((d, d))
    f = np.zeros(d)
    const = 0.0
    for k in range(N):
        Sk, Ik = state_map(k), input_map(k)
        H += Sk.T @ w.Q_x @ Sk + Ik.T @ w.Q_u @ Ik
        f += -2.0 * Sk.T @ w.Q_x @ base.x_target - 2.0 * Ik.T @ w.Q_u @ base.u_target
        const += float(base.x_target @ w.Q_x @ base.x_target
                       + base.u_target @ w.Q_u @ base.u_target)
    SN = state_map(N)
    H += SN.T @ w.Q_N @ SN
    f += -2.0 * SN.T @ w.Q_N @ base.x_target
    const += float(base.x_target @ w.Q_N @ base.x_target)
    H *= 2.0

    Fn, Fb = art.F_facets.normals, art.F_facets.offsets
    rows_tube = np.zeros((Fn.shape[0], d))
    rows_tube[:, :n] = Fn
    rows_state = np.vstack([art.X_t.normals @ state_map(k) for k in range(N)])
    offs_state = np.tile(art.X_t.offsets, N)
    rows_input = np.vstack([art.U_t.normals @ input_map(k) for k in range(N)])
    offs_input = np.tile(art.U_t.offsets, N)
    rows_term = base.moas.normals @ SN
    offs_term = base.moas.offsets + base.moas.normals @ base.x_target

    G = np.vstack([rows_tube, rows_state, rows_input, rows_term])
    h_const = np.concatenate([Fb, offs_state, offs_input, offs_term])
    return {
        "d": d, "H": H, "f": f, "const": const,
        "G": G, "h_const": h_const,
        "tube_rows": slice(0, Fn.shape[0]),
        "Fn": Fn, "Fb": Fb,
        "state_map_N": SN,
    }


class BaselineController:
    """Online loop of the fixed-target tube controller."""

    def __init__(self, base, eps_feas=1e-8, eps_opt=1e-8):
        self.base = base
        self.art = base.art
        c = base.condensed()
        self.solver = ActiveSetSolver(c["H"], c["G"], eps_feas=eps_feas, eps_opt=eps_opt)
        self.prev_z = None
        self.prev_active = None

    def reset(self):
        self.prev_z = None
        self.prev_active = None
        self.solver.warm_z = None

    def shifted_candidate(self):
        if self.prev_z is None:
            return None
        art, base = self.art, self.base
        c = base.condensed()
        n, p = art.sys.n, art.sys.p
        x0 = self.prev_z[:n]
        u_seq = self.prev_z[n:].reshape(art.N, p)
        xN = c["state_map_N"] @ self.prev_z
        kappa = base.u_target + art.riccati.K_inf @ (xN - base.x_target)
        x0_next = art.sys.A @ x0 + art.sys.B @ u_seq[0]
        return np.concatenate([x0_next, u_seq[1:].ravel(), kappa])

    def _cold_candidate(self, x_t):
        """Terminal-law rollout from x_t when x_t sits in the invariant set."""
        art, base = self.art, self.base
        delta = x_t - base.x_target
        if np.max(base.moas.normals @ delta - base.moas.offsets) > 0.0:
            return None
        xk = x_t.copy()
        inputs = np.empty((art.N, art.sys.p))
        for k in range(art.N):
            inputs[k] = base.u_target + art.riccati.K_inf @ (xk - base.x_target)
            xk = art.sys.A @ xk + art.sys.B @ inputs[k]
        return np.concatenate([x_t, inputs.ravel()])

    def _h_vector(self, x_t):
        c = self.base.condensed()
        h = c["h_const"].copy()
        h[c["tube_rows"]] = c["Fb"] + c["Fn"] @ np.asarray(x_t, dtype=float).ravel()
        return h

    def control_step(self, x_t, r=None, x_des=None, u_des=None):
        t0 = time.perf_counter()
        art, base = self.art, self.base
        x_t = np.asarray(x_t, dtype=float).ravel()
        c = base.condensed()
        h = self._h_vector(x_t)
        candidate = self.shifted_candidate()
        cand_feasible = None
        if candidate is not None:
            cand_feasible = bool(np.max(c["G"] @ candidate - h) <= 1e-8)
        else:
            candidate = self._cold_candidate(x_t)
        sol = self.solver.solve(c["f"], h, z0=candidate, active0=self.prev_active)
        if sol.status == "infeasible":
            raise InfeasibleError("baseline step problem infeasible",
                                  certificate=sol.certificate)
        if sol.status != "optimal":
            raise SolverFailureError(f"QP solver returned status '{sol.status}'")
        z = sol.z_star
        n, p = art.sys.n, art.sys.p
        x0 = z[:n]
        u_seq = z[n:].reshape(art.N, p)
        u = u_seq[0] + art.K_tube @ (x_t - x0)
        cost = 0.5 * z @ c["H"] @ z + c["f"] @ z + c["const"]
        self.prev_z = z
        self.prev_active = sol.active_set
        stats = {
            "iterations": sol.iterations,
            "status": sol.status,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "candidate_feasible": cand_feasible,
            "input_violation": float(np.max(art.U.normals @ u - art.U.offsets)),
            "solve_seconds": time.perf_counter() - t0,
        }
        return StepResult(u_applied=u, theta_star=base.theta_target.copy(),
                          x0_star=x0.copy(), u_seq_star=u_seq.copy(),
                          cost_star=float(cost), qp_stats=stats)

    def quick_feasible(self, x_t):
        delta = np.asarray(x_t, dtype=float).ravel() - self.base.x_target
        return bool(np.max(self.base.moas.normals @ delta - self.base.moas.offsets) <= 0.0)

    def is_feasible(self, x_t):
        from .qp.simplex import feasible_point

        point, _ = feasible_point(self.base.condensed()["G"], self._h_vector(x_t))
        return point is not None


def theta_diamond(art, x_des, u_des, r=None, return_info=False):
    """Admissible parameter closest to the desired steady pair.

    Minimizes the Q_sx/Q_su-weighted distance of (M1 th, M2 th) to
    (x_des, u_des) over the tightened steady-state constraints; with r
    given, the parameter is additionally pinned to the reference manifold
    L th = r (eliminated through its null space).
    """
    ssp = art.ssp
    x_des = np.asarray(x_des, dtype=float).ravel()
    u_des = np.asarray(u_des, dtype=float).ravel()
    nth = ssp.n_theta
    H = 2.0 * _sym(ssp.M1.T @ art.weights.Q_sx @ ssp.M1 + ssp.M2.T @ art.weights.Q_su @ ssp.M2)
    f0 = -2.0 * (ssp.M1.T @ art.weights.Q_sx @ x_des + ssp.M2.T @ art.weights.Q_su @ u_des)
    degenerate = bool(np.max(np.abs(H)) < 1e-14)

    rows = np.vstack([art.X_t.normals @ ssp.M1, art.U_t.normals @ ssp.M2])
    offs = np.concatenate([art.X_t.offsets, art.U_t.offsets])
    keep = np.linalg.norm(rows, axis=1) > 1e-14
    rows, offs = rows[keep], offs[keep]

    if r is None:
        prog = QuadProgram(H=H + 1e-12 * np.eye(nth), f=f0, G=rows, h=offs)
        sol = solve_qp(prog)
        if sol.status != "optimal":
            raise NoSteadyStateError("no admissible steady pair exists")
        theta = sol.z_star
    else:
        r = np.asarray(r, dtype=float).ravel()
        theta_p, *_ = np.linalg.lstsq(ssp.L, r, rcond=None)
        if np.max(np.abs(ssp.L @ theta_p - r)) > 1e-8:
            raise NoSteadyStateError("reference is outside the steady-output range")
        _, svals, vt = np.linalg.svd(ssp.L)
        rank = int(np.sum(svals > max(ssp.L.shape) * np.finfo(float).eps * svals[0]))
        Z = vt[rank:].T
        if Z.shape[1] == 0:
            if rows.size and np.max(rows @ theta_p - offs) > 1e-9:
                raise NoSteadyStateError("the reference's steady pair violates "
                                         "the tightened constraints")
            theta = theta_p
        else:
            Hz = Z.T @ H @ Z + 1e-12 * np.eye(Z.shape[1])
            fz = Z.T @ (f0 + H @ theta_p)
            prog = QuadProgram(H=Hz, f=fz, G=rows @ Z, h=offs - rows @ theta_p)
            sol = solve_qp(prog)
            if sol.status != "optimal":
                raise NoSteadyStateError("no admissible steady pair on the "
                                         "reference manifold")
            theta = theta_p + Z @ sol.z_star
    if return_info:
        return theta, {"degenerate": degenerate}
    return theta


def theorem2_bound(weights, ssp, theta_tilde, x_des, u_des):
    """Distance bound ingredients for the limiting parameter.

    f = 2 ||M1|| ||Q_sx|| ||M1 th - x_des|| + 2 ||M2|| ||Q_su|| ||M2 th - u_des||
    alpha = the steady bias margin; the bound is f / alpha (alpha > 0 required).
    """
    theta_tilde = np.asarray(theta_tilde, dtype=float).ravel()
    x_des = np.asarray(x_des, dtype=float).ravel()
    u_des = np.asarray(u_des, dtype=float).ravel()
    alpha = steady_bias_margin(weights, ssp)
    if alpha <= 0.0:
        raise ConditionViolatedError(
            "weight condition violated (increase Q_r relative to Q_sx/Q_su)")
    f_value = 2.0 * np.linalg.norm(ssp.M1, 2) * np.linalg.norm(weights.Q_sx, 2) \
        * np.linalg.norm(ssp.M1 @ theta_tilde - x_des)
    if ssp.M2.size:
        f_value += 2.0 * np.linalg.norm(ssp.M2, 2) * np.linalg.norm(weights.Q_su, 2) \
            * np.linalg.norm(ssp.M2 @ theta_tilde - u_des)
    return {"f_value": float(f_value), "alpha": float(alpha),
            "bound": float(f_value / alpha)}


def config_hash(config_dict):
    """Stable hash of a configuration mapping for provenance headers."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
