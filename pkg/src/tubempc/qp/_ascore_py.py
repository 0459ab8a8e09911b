"""Pure-NumPy active-set kernel (fallback for the compiled extension).

Both kernels implement the identical primal active-set iteration on a
strictly convex QP  min 1/2 z'Hz + f'z  s.t.  G z <= h  (rows of G
normalized by the caller).  The step direction is computed by the
null-space method: with G_A' = Q R, the trailing columns Z of Q satisfy
G_A Z = 0 to machine precision, so the iterate never drifts off its
active faces no matter how ill-conditioned the working set is:

    p = Z y,   (Z'HZ) y = -Z'(Hz + f),

multipliers on demand from  R lam = -Q_1'(Hz + f).  A full step lands
exactly on the subproblem optimum, so stationarity at exit holds to
solve precision.  Optimality is declared on an unblocked near-zero step
with nonnegative multipliers; ties break on the lowest row index
everywhere, making the iterate sequence deterministic.
"""

import numpy as np

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_NUMERICAL = 2


def asqp_kernel(z, H, f, G, h, active, max_iter, step_tol, lam_tol):
    """Run the active-set iteration; see the module docstring.

    z is updated in place.  Returns (status, iterations, active_rows,
    lam_active) with the final working set and its multipliers.
    """
    d = z.shape[0]
    act = list(active)
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        g = H @ z + f
        if act:
            A = np.array(act, dtype=np.intp)
            Q, R = np.linalg.qr(G[A].T, mode="complete")
            R = R[: len(act)]
            Z = Q[:, len(act):]
        else:
            A = np.zeros(0, dtype=np.intp)
            Q = np.eye(d)
            R = np.zeros((0, 0))
            Z = Q
        if Z.shape[1]:
            Hr = Z.T @ H @ Z
            try:
                L = np.linalg.cholesky(Hr)
            except np.linalg.LinAlgError:
                return STATUS_NUMERICAL, it, A, np.zeros(len(act))
            y = np.linalg.solve(L.T, np.linalg.solve(L, -(Z.T @ g)))
            p = Z @ y
        else:
            p = np.zeros(d)

        tiny = np.max(np.abs(p), initial=0.0) <= step_tol * (1.0 + np.max(np.abs(z)))
        if tiny and act:
            rhs = -(Q[:, : len(act)].T @ g)
            diag = np.abs(np.diag(R))
            if diag.min() <= 1e-12 * max(1.0, diag.max()):
                # numerically dependent working set: retreat from the face
                # that contributes least
                j = int(np.argmin(diag))
                act.pop(j)
                continue
            lam = np.linalg.solve(R, rhs)
            if lam.min() < -lam_tol:
                lmin = lam.min()
                ties = [act[k] for k in range(len(act)) if lam[k] == lmin]
                act.remove(min(ties))
                continue
        elif tiny:
            lam = np.zeros(0)

        Gz = G @ z
        Gp = G @ p
        mask = Gp > 1e-12
        mask[A] = False
        alpha = 1.0
        block = -1
        if mask.any():
            t = np.where(mask, (h - Gz) / np.where(mask, Gp, 1.0), np.inf)
            j = int(np.argmin(t))  # first occurrence: lowest row index on ties
            if t[j] < 1.0:
                alpha = max(t[j], 0.0)
                block = j
        z += alpha * p
        if block >= 0:
            act.append(block)
            continue
        if tiny:
            # unblocked full step onto the subproblem optimum with clean duals
            return STATUS_OPTIMAL, it, A, lam if act else np.zeros(0)

    return STATUS_MAX_ITER, max_iter, np.array(act, dtype=np.intp), np.asarray(lam)
