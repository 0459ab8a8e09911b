"""Plant model, discrete Riccati solution, and steady-state parameterization.

The equilibrium manifold {(x, u) : x = Ax + Bu} is parameterized by an
orthonormal null-space basis of [A - I, B]; M1/M2 map the low-dimensional
parameter to the equilibrium state/input and L to the trackable output.
Stabilizability is validated operationally: the Riccati iteration either
converges to a stabilizing gain or reports failure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, NoSteadyStateError


@dataclass(frozen=True)
class LTISystem:
    """x(t+1) = A x + B u + w,  y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidArgumentError("A must be square")
        if B.shape[0] != n:
            raise InvalidArgumentError("B row count must match A")
        if C.shape[1] != n:
            raise InvalidArgumentError("C column count must match A")
        if D.shape != (C.shape[0], B.shape[1]):
            raise InvalidArgumentError("D must be m x p")
        for M in (A, B, C, D):
            if not np.isfinite(M).all():
                raise InvalidArgumentError("system matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def m(self):
        return self.C.shape[0]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "C", "D")}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: np.asarray(data[k], dtype=float) for k in ("A", "B", "C", "D")})


@dataclass(frozen=True)
class RiccatiResult:
    """Stabilizing fixed point of the Riccati map plus its gain."""

    Q_N: np.ndarray
    K_inf: np.ndarray
    residual: float

    def to_dict(self):
        return {"Q_N": self.Q_N.tolist(), "K_inf": self.K_inf.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["Q_N"], dtype=float), np.asarray(data["K_inf"], dtype=float),
                   float(data["residual"]))


@dataclass(frozen=True)
class SteadyStateParam:
    """Equilibria as x_s = M1 theta, u_s = M2 theta, output r = L theta."""

    M1: np.ndarray
    M2: np.ndarray
    L: np.ndarray

    @property
    def n_theta(self):
        return self.M1.shape[1]

    def to_dict(self):
        return {"M1": self.M1.tolist(), "M2": self.M2.tolist(), "L": self.L.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(*(np.asarray(data[k], dtype=float) for k in ("M1", "M2", "L")))


def riccati_map(sys, Q, Q_x, Q_u):
    """One application of the discrete Riccati recursion to Q."""
    A, B = sys.A, sys.B
    BtQ = B.T @ Q
    gain = np.linalg.solve(Q_u + BtQ @ B, BtQ @ A)
    nxt = A.T @ Q @ A - (A.T @ Q @ B) @ gain + Q_x
    return 0.5 * (nxt + nxt.T)


def dare_solve(sys, Q_x, Q_u, tol=1e-12, max_iter=100_000):
    """Fixed point of the Riccati recursion by value iteration.

    Stops when the relative change drops below tol; the result carries
    the fixed-point residual (max-norm) and the gain
    K_inf = -(Q_u + B'Q B)^-1 B'Q A.  Non-convergence signals a
    non-stabilizable pair or unsuitable weights.
    """
    Q_x = np.asarray(Q_x, dtype=float)
    Q_u = np.asarray(Q_u, dtype=float)
    if np.any(np.linalg.eigvalsh(0.5 * (Q_x + Q_x.T)) < -1e-10):
        raise InvalidArgumentError("Q_x must be positive semidefinite")
    if np.any(np.linalg.eigvalsh(0.5 * (Q_u + Q_u.T)) <= 0.0):
        raise InvalidArgumentError("Q_u must be positive definite")

    Q = Q_x.copy()
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = riccati_map(sys, Q, Q_x, Q_u)
        if not np.isfinite(nxt).all() or np.max(np.abs(nxt)) > 1e150:
            raise ConvergenceError("Riccati value iteration diverged "
                                   "(is (A, B) stabilizable?)")
        delta = np.max(np.abs(nxt - Q))
        Q = nxt
        if delta <= tol * max(1.0, np.max(np.abs(Q))):
            break
    else:
        raise ConvergenceError("Riccati value iteration did not converge "
                               "(is (A, B) stabilizable?)")

    residual = float(np.max(np.abs(Q - riccati_map(sys, Q, Q_x, Q_u))))
    BtQ = sys.B.T @ Q
    K_inf = -np.linalg.solve(Q_u + BtQ @ sys.B, BtQ @ sys.A)
    if not is_schur(sys.A + sys.B @ K_inf):
        raise ConvergenceError("Riccati gain is not stabilizing "
                               "(is (A, B) stabilizable?)")
    return RiccatiResult(Q_N=Q, K_inf=K_inf, residual=residual)


def is_schur(M, margin=1e-9):
    """Spectral radius strictly below 1 - margin."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise InvalidArgumentError("is_schur expects a square matrix")
    rho = float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0
    return rho < 1.0 - margin


def steady_state_param(sys):
    """Orthonormal basis of the null space of [A - I, B], split and mapped.

    Columns of [M1; M2] are orthonormal; L = C M1 + D M2.  Signs are
    canonicalized (largest-magnitude entry positive) for reproducibility.
    """
    n, p = sys.n, sys.p
    pencil = np.hstack([sys.A - np.eye(n), sys.B])
    _, svals, vt = np.linalg.svd(pencil)
    tol = max(pencil.shape) * np.finfo(float).eps * (svals[0] if svals.size else 1.0)
    rank = int(np.sum(svals > tol))
    basis = vt[rank:].T  # (n + p) x n_theta, orthonormal
    if basis.shape[1] == 0:
        raise NoSteadyStateError("the plant admits no steady state")
    for j in range(basis.shape[1]):
        k = int(np.argmax(np.abs(basis[:, j])))
        if basis[k, j] < 0:
            basis[:, j] = -basis[:, j]
    M1, M2 = basis[:n], basis[n:]
    L = sys.C @ M1 + sys.D @ M2
    return SteadyStateParam(M1=M1, M2=M2, L=L)
