# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: periodic bicubic interpolation and the transportation network simplex.

Semantics match ``_pykernels`` exactly; see the docstrings there.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

cdef enum:
    OPTIMAL = 0
    ITERATION_LIMIT = 1


def interp_bicubic_periodic(f, xi, yi):
    cdef double[:, ::1] F = np.ascontiguousarray(f, dtype=np.float64)
    xb, yb = np.broadcast_arrays(np.asarray(xi, dtype=np.float64), np.asarray(yi, dtype=np.float64))
    shape = xb.shape
    cdef double[::1] X = np.ascontiguousarray(xb).ravel()
    cdef double[::1] Y = np.ascontiguousarray(yb).ravel()
    cdef Py_ssize_t npts = X.shape[0]
    cdef long n = F.shape[0]
    out_arr = np.empty(npts, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p
    cdef int a, b
    cdef long ix, iy, ra, cb
    cdef double fx, fy, s, t, acc, row
    cdef double wx[4]
    cdef double wy[4]
    with nogil:
        for p in range(npts):
            fx = floor(X[p])
            fy = floor(Y[p])
            s = X[p] - fx
            t = Y[p] - fy
            wx[0] = -s * (s - 1.0) * (s - 2.0) / 6.0
            wx[1] = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
            wx[2] = -(s + 1.0) * s * (s - 2.0) / 2.0
            wx[3] = (s + 1.0) * s * (s - 1.0) / 6.0
            wy[0] = -t * (t - 1.0) * (t - 2.0) / 6.0
            wy[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
            wy[2] = -(t + 1.0) * t * (t - 2.0) / 2.0
            wy[3] = (t + 1.0) * t * (t - 1.0) / 6.0
            ix = <long>fx
            iy = <long>fy
            acc = 0.0
            for a in range(4):
                ra = (ix + a - 1) % n
                if ra < 0:
                    ra += n
                row = 0.0
                for b in range(4):
                    cb = (iy + b - 1) % n
                    if cb < 0:
                        cb += n
                    row += wy[b] * F[ra, cb]
                acc += wx[a] * row
            out[p] = acc
    return out_arr.reshape(shape)


def transport_simplex(a, b, C, long max_iter=0, double tol=0.0):
    cdef double[::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] Cm = np.ascontiguousarray(C, dtype=np.float64)
    cdef long m = Cm.shape[0]
    cdef long n = Cm.shape[1]
    cdef long nn = m + n
    cdef long K = nn - 1
    cdef long mn = m * n
    if max_iter <= 0:
        max_iter = 50 * nn * nn + 1000
    cdef double cmax = 0.0
    cdef long i, j, k
    for i in range(m):
        for j in range(n):
            if abs(Cm[i, j]) > cmax:
                cmax = abs(Cm[i, j])
    if tol <= 0:
        tol = 1e-12 * (1.0 + cmax)

    rows_arr = np.zeros(K, dtype=np.int64)
    cols_arr = np.zeros(K, dtype=np.int64)
    flow_arr = np.zeros(K, dtype=np.float64)
    cdef cnp.int64_t[::1] rows = rows_arr
    cdef cnp.int64_t[::1] cols = cols_arr
    cdef double[::1] flow = flow_arr

    # northwest corner start
    sa_arr = np.array(A, copy=True)
    sb_arr = np.array(B, copy=True)
    cdef double[::1] sa = sa_arr
    cdef double[::1] sb = sb_arr
    cdef double q
    i = 0
    j = 0
    k = 0
    while True:
        q = sa[i] if sa[i] < sb[j] else sb[j]
        rows[k] = i
        cols[k] = j
        flow[k] = q
        k += 1
        sa[i] -= q
        sb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and sa[i] == 0.0):
            i += 1
        else:
            j += 1

    pot_arr = np.zeros(nn, dtype=np.float64)
    cdef double[::1] pot = pot_arr
    cdef cnp.int64_t[::1] parent = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] parc = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] depth = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] deg = np.zeros(nn + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] fill = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] nbr = np.zeros(2 * K, dtype=np.int64)
    cdef cnp.int64_t[::1] narc = np.zeros(2 * K, dtype=np.int64)
    cdef cnp.int64_t[::1] queue = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] seen = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] minus = np.zeros(nn, dtype=np.int64)
    cdef cnp.int64_t[::1] plus = np.zeros(nn, dtype=np.int64)

    cdef long block = <long>sqrt(<double>mn)
    if block < 64:
        block = 64
    if block > mn:
        block = mn
    cdef long pos = 0
    cdef long it = 0
    cdef int status = ITERATION_LIMIT
    cdef long degenerate_run = 0
    cdef long head, tail, node, nb, e, scanned, in_block, best, arc, ei, ej
    cdef long p, r, nminus, nplus, leave, leave_id, cid, parity
    cdef double red, best_red, theta

    with nogil:
        while it < max_iter:
            # adjacency (CSR) of the basis tree
            for node in range(nn + 1):
                deg[node] = 0
            for k in range(K):
                deg[rows[k] + 1] += 1
                deg[m + cols[k] + 1] += 1
            for node in range(nn):
                deg[node + 1] += deg[node]
                fill[node] = deg[node]
            for k in range(K):
                node = rows[k]
                nbr[fill[node]] = m + cols[k]
                narc[fill[node]] = k
                fill[node] += 1
                node = m + cols[k]
                nbr[fill[node]] = rows[k]
                narc[fill[node]] = k
                fill[node] += 1
            # BFS for potentials, parents and depths
            for node in range(nn):
                seen[node] = 0
            head = 0
            tail = 1
            queue[0] = 0
            seen[0] = 1
            pot[0] = 0.0
            parent[0] = -1
            parc[0] = -1
            depth[0] = 0
            while head < tail:
                node = queue[head]
                head += 1
                for e in range(deg[node], deg[node + 1]):
                    nb = nbr[e]
                    if seen[nb] == 0:
                        seen[nb] = 1
                        k = narc[e]
                        parent[nb] = node
                        parc[nb] = k
                        depth[nb] = depth[node] + 1
                        pot[nb] = Cm[rows[k], cols[k]] - pot[node]
                        queue[tail] = nb
                        tail += 1
            # pricing
            best = -1
            best_red = -tol
            if degenerate_run > nn:
                for arc in range(mn):
                    i = arc // n
                    j = arc - i * n
                    red = Cm[i, j] - pot[i] - pot[m + j]
                    if red < -tol:
                        best = arc
                        break
            else:
                scanned = 0
                in_block = 0
                while scanned < mn:
                    i = pos // n
                    j = pos - i * n
                    red = Cm[i, j] - pot[i] - pot[m + j]
                    if red < best_red:
                        best_red = red
                        best = pos
                    pos += 1
                    if pos == mn:
                        pos = 0
                    scanned += 1
                    in_block += 1
                    if in_block == block:
                        if best >= 0:
                            break
                        in_block = 0
            if best < 0:
                status = OPTIMAL
                break
            it += 1
            ei = best // n
            ej = best - ei * n
            # cycle
            nminus = 0
            nplus = 0
            p = ei
            r = m + ej
            parity = 0
            while depth[p] > depth[r]:
                if parity == 0:
                    minus[nminus] = parc[p]
                    nminus += 1
                else:
                    plus[nplus] = parc[p]
                    nplus += 1
                parity = 1 - parity
                p = parent[p]
            cid = 0
            while depth[r] > depth[p]:
                if cid == 0:
                    minus[nminus] = parc[r]
                    nminus += 1
                else:
                    plus[nplus] = parc[r]
                    nplus += 1
                cid = 1 - cid
                r = parent[r]
            while p != r:
                if parity == 0:
                    minus[nminus] = parc[p]
                    nminus += 1
                else:
                    plus[nplus] = parc[p]
                    nplus += 1
                parity = 1 - parity
                p = parent[p]
                if cid == 0:
                    minus[nminus] = parc[r]
                    nminus += 1
                else:
                    plus[nplus] = parc[r]
                    nplus += 1
                cid = 1 - cid
                r = parent[r]
            theta = flow[minus[0]]
            for e in range(1, nminus):
                if flow[minus[e]] < theta:
                    theta = flow[minus[e]]
            leave = -1
            leave_id = mn
            for e in range(nminus):
                k = minus[e]
                if flow[k] == theta and rows[k] * n + cols[k] < leave_id:
                    leave = k
                    leave_id = rows[k] * n + cols[k]
            for e in range(nminus):
                flow[minus[e]] -= theta
            for e in range(nplus):
                flow[plus[e]] += theta
            rows[leave] = ei
            cols[leave] = ej
            flow[leave] = theta
            if theta == 0.0:
                degenerate_run += 1
            else:
                degenerate_run = 0

    cost = 0.0
    for k in range(K):
        cost += flow[k] * Cm[rows[k], cols[k]]
    u = np.array(pot_arr[:m], copy=True)
    v = np.array(pot_arr[m:], copy=True)
    return rows_arr, cols_arr, flow_arr, u, v, float(cost), int(it), int(status)
