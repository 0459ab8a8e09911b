# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled active-set kernel; semantics mirror _ascore_py exactly.

The null-space step uses a hand-rolled Householder QR of the working-set
rows, so the package has no compiled LAPACK dependency.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_NUMERICAL = 2


cdef int _chol(double[:, ::1] M, double[:, ::1] L, int m) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for j in range(m):
        s = M[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return 1
        L[j, j] = s ** 0.5
        for i in range(j + 1, m):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] L, int m, double[::1] rhs, double[::1] out) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(m):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(m - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, m):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


cdef void _householder_qr(double[:, ::1] M, double[:, ::1] Q, double[::1] vwork,
                          double[::1] wwork, int d, int na) noexcept nogil:
    """QR of the d x na matrix M in place (R in its upper triangle); Q (d x d)
    accumulates the product of reflectors."""
    cdef int i, j, k
    cdef double nrm, beta, s, x0
    for i in range(d):
        for j in range(d):
            Q[i, j] = 1.0 if i == j else 0.0
    for k in range(na):
        nrm = 0.0
        for i in range(k, d):
            nrm += M[i, k] * M[i, k]
        nrm = nrm ** 0.5
        if nrm <= 1e-300:
            continue
        x0 = M[k, k]
        for i in range(k, d):
            vwork[i] = M[i, k]
        if x0 >= 0.0:
            vwork[k] += nrm
        else:
            vwork[k] -= nrm
        s = 0.0
        for i in range(k, d):
            s += vwork[i] * vwork[i]
        if s <= 1e-300:
            continue
        beta = 2.0 / s
        # apply reflector to the remaining columns of M
        for j in range(k, na):
            s = 0.0
            for i in range(k, d):
                s += vwork[i] * M[i, j]
            s *= beta
            for i in range(k, d):
                M[i, j] -= s * vwork[i]
        # accumulate Q <- Q H_k (columns k..d-1 mix)
        for i in range(d):
            s = 0.0
            for j in range(k, d):
                s += Q[i, j] * vwork[j]
            wwork[i] = beta * s
        for i in range(d):
            for j in range(k, d):
                Q[i, j] -= wwork[i] * vwork[j]


def asqp_kernel(double[::1] z, double[:, ::1] H, double[::1] f,
                double[:, ::1] G, double[::1] h,
                active0, int max_iter, double step_tol, double lam_tol):
    cdef int d = z.shape[0]
    cdef int q = G.shape[0]
    cdef int na = 0
    cdef int it, i, j, k, block, drop_k, tiny, nz
    cdef double s, pmax, zmax, lmin, alpha, t, gpi, dmin, dmax

    act_np = np.empty(d + 1, dtype=np.intp)
    cdef cnp.intp_t[::1] act = act_np
    in_act_np = np.zeros(q, dtype=np.uint8)
    cdef unsigned char[::1] in_act = in_act_np
    M_np = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] M = M_np
    Q_np = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] Q = Q_np
    Hr_np = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] Hr = Hr_np
    L_np = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] LL = L_np
    HZ_np = np.empty((d, d), dtype=np.float64)
    cdef double[:, ::1] HZ = HZ_np
    g_np = np.empty(d, dtype=np.float64)
    cdef double[::1] g = g_np
    p_np = np.zeros(d, dtype=np.float64)
    cdef double[::1] p = p_np
    y_np = np.empty(d, dtype=np.float64)
    cdef double[::1] y = y_np
    rhs_np = np.empty(d, dtype=np.float64)
    cdef double[::1] rhs = rhs_np
    lam_np = np.zeros(d + 1, dtype=np.float64)
    cdef double[::1] lam = lam_np
    vwork_np = np.empty(d, dtype=np.float64)
    cdef double[::1] vwork = vwork_np
    wwork_np = np.empty(d, dtype=np.float64)
    cdef double[::1] wwork = wwork_np
    Gp_np = np.empty(q, dtype=np.float64)
    cdef double[::1] Gp = Gp_np
    Gz_np = np.empty(q, dtype=np.float64)
    cdef double[::1] Gz = Gz_np

    for k in range(len(active0)):
        act[na] = active0[k]
        in_act[act[na]] = 1
        na += 1

    cdef int n_lam = 0
    for it in range(1, max_iter + 1):
        for i in range(d):
            s = f[i]
            for j in range(d):
                s += H[i, j] * z[j]
            g[i] = s

        nz = d - na
        if na > 0:
            for j in range(na):
                for i in range(d):
                    M[i, j] = G[act[j], i]
            _householder_qr(M, Q, vwork, wwork, d, na)
        else:
            for i in range(d):
                for j in range(d):
                    Q[i, j] = 1.0 if i == j else 0.0

        if nz > 0:
            # HZ = H @ Z, Hr = Z' HZ with Z = Q[:, na:]
            for i in range(d):
                for j in range(nz):
                    s = 0.0
                    for k in range(d):
                        s += H[i, k] * Q[k, na + j]
                    HZ[i, j] = s
            for i in range(nz):
                for j in range(nz):
                    s = 0.0
                    for k in range(d):
                        s += Q[k, na + i] * HZ[k, j]
                    Hr[i, j] = s
            if _chol(Hr, LL, nz) != 0:
                return STATUS_NUMERICAL, it, np.asarray(act_np[:na]).copy(), np.zeros(na)
            for i in range(nz):
                s = 0.0
                for k in range(d):
                    s += Q[k, na + i] * g[k]
                rhs[i] = -s
            _chol_solve(LL, nz, rhs, y)
            for i in range(d):
                s = 0.0
                for j in range(nz):
                    s += Q[i, na + j] * y[j]
                p[i] = s
        else:
            for i in range(d):
                p[i] = 0.0

        pmax = 0.0
        zmax = 0.0
        for j in range(d):
            if p[j] > pmax:
                pmax = p[j]
            elif -p[j] > pmax:
                pmax = -p[j]
            if z[j] > zmax:
                zmax = z[j]
            elif -z[j] > zmax:
                zmax = -z[j]
        tiny = pmax <= step_tol * (1.0 + zmax)

        n_lam = 0
        if tiny and na > 0:
            dmin = -1.0
            dmax = 0.0
            for k in range(na):
                s = M[k, k] if M[k, k] >= 0.0 else -M[k, k]
                if dmin < 0.0 or s < dmin:
                    dmin = s
                if s > dmax:
                    dmax = s
            if dmax < 1.0:
                dmax = 1.0
            if dmin <= 1e-12 * dmax:
                # numerically dependent working set: retreat from the face
                # that contributes least
                drop_k = 0
                s = M[0, 0] if M[0, 0] >= 0.0 else -M[0, 0]
                dmin = s
                for k in range(1, na):
                    t = M[k, k] if M[k, k] >= 0.0 else -M[k, k]
                    if t < dmin:
                        dmin = t
                        drop_k = k
                in_act[act[drop_k]] = 0
                for k in range(drop_k, na - 1):
                    act[k] = act[k + 1]
                na -= 1
                continue
            for i in range(na):
                s = 0.0
                for k in range(d):
                    s += Q[k, i] * g[k]
                rhs[i] = -s
            for i in range(na - 1, -1, -1):
                s = rhs[i]
                for k in range(i + 1, na):
                    s -= M[i, k] * lam[k]
                lam[i] = s / M[i, i]
            n_lam = na
            lmin = lam[0]
            for k in range(1, na):
                if lam[k] < lmin:
                    lmin = lam[k]
            if lmin < -lam_tol:
                drop_k = -1
                for k in range(na):
                    if lam[k] == lmin and (drop_k < 0 or act[k] < act[drop_k]):
                        drop_k = k
                in_act[act[drop_k]] = 0
                for k in range(drop_k, na - 1):
                    act[k] = act[k + 1]
                na -= 1
                continue

        for i in range(q):
            s = 0.0
            t = 0.0
            for j in range(d):
                s += G[i, j] * z[j]
                t += G[i, j] * p[j]
            Gz[i] = s
            Gp[i] = t
        alpha = 1.0
        block = -1
        for i in range(q):
            if in_act[i]:
                continue
            gpi = Gp[i]
            if gpi > 1e-12:
                t = (h[i] - Gz[i]) / gpi
                if t < alpha:
                    alpha = t
                    block = i
        if alpha < 0.0:
            alpha = 0.0
        for j in range(d):
            z[j] += alpha * p[j]
        if block >= 0:
            act[na] = block
            in_act[block] = 1
            na += 1
            continue
        if tiny:
            # unblocked full step onto the subproblem optimum with clean duals
            return STATUS_OPTIMAL, it, np.asarray(act_np[:na]).copy(), np.asarray(lam_np[:n_lam]).copy()

    return STATUS_MAX_ITER, max_iter, np.asarray(act_np[:na]).copy(), np.asarray(lam_np[:n_lam]).copy()
