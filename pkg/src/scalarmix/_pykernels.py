"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation and are used when the
compiled extension is unavailable (or ``SMIX_PURE_PYTHON=1``).
"""

from collections import deque

import numpy as np

OPTIMAL = 0
ITERATION_LIMIT = 1


def cubic_weights(s):
    """Four-point Lagrange weights for offsets -1, 0, 1, 2 at fractional position ``s``."""
    sp1 = s + 1.0
    sm1 = s - 1.0
    sm2 = s - 2.0
    return (-s * sm1 * sm2 / 6.0,
            sp1 * sm1 * sm2 / 2.0,
            -sp1 * s * sm2 / 2.0,
            sp1 * s * sm1 / 6.0)


def interp_bicubic_periodic(f, xi, yi):
    """Tensor-product cubic Lagrange interpolation of periodic samples.

    Parameters
    ----------
    f : ndarray, shape (n, n)
        Samples ``f[i, j]`` at grid point ``(i, j)``.
    xi, yi : ndarray
        Query positions in grid units (any real values; wrapped periodically).
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    xi = np.asarray(xi, dtype=float)
    yi = np.asarray(yi, dtype=float)
    fx = np.floor(xi)
    fy = np.floor(yi)
    wx = cubic_weights(xi - fx)
    wy = cubic_weights(yi - fy)
    ix = fx.astype(np.int64)
    iy = fy.astype(np.int64)
    out = np.zeros(np.broadcast(xi, yi).shape)
    for a in range(4):
        ra = (ix + a - 1) % n
        row = np.zeros_like(out)
        for b in range(4):
            row += wy[b] * f[ra, (iy + b - 1) % n]
        out += wx[a] * row
    return out


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    sa = a.copy()
    sb = b.copy()
    rows, cols, flow = [], [], []
    i = j = 0
    while True:
        q = min(sa[i], sb[j])
        rows.append(i)
        cols.append(j)
        flow.append(q)
        sa[i] -= q
        sb[j] -= q
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and sa[i] == 0.0):
            i += 1
        else:
            j += 1
    return rows, cols, flow


def transport_simplex(a, b, C, max_iter=0, tol=0.0):
    """Network simplex for the balanced transportation problem.

    Minimises ``sum C[i, j] x[i, j]`` subject to row sums ``a`` and column sums
    ``b`` (which must have equal totals).  The basis is a spanning tree of the
    bipartite graph with ``m + n - 1`` arcs, degenerate arcs included.

    Returns
    -------
    rows, cols, flows : ndarray
        Basic arcs of the final tree and their flows.
    u, v : ndarray
        Dual potentials with ``u[i] + v[j] = C[i, j]`` on basic arcs.
    cost : float
    iterations : int
    status : int
        ``OPTIMAL`` or ``ITERATION_LIMIT``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    if max_iter <= 0:
        max_iter = 50 * (m + n) * (m + n) + 1000
    if tol <= 0:
        tol = 1e-12 * (1.0 + float(np.abs(C).max(initial=0.0)))
    rows, cols, flow = _northwest_corner(a, b)
    nn = m + n
    status = ITERATION_LIMIT
    degenerate_run = 0
    it = 0
    while it < max_iter:
        # potentials by BFS over the basis tree rooted at source 0
        adj = [[] for _ in range(nn)]
        for k in range(nn - 1):
            adj[rows[k]].append((m + cols[k], k))
            adj[m + cols[k]].append((rows[k], k))
        pot = [0.0] * nn
        parent = [-1] * nn
        parc = [-1] * nn
        depth = [0] * nn
        seen = [False] * nn
        seen[0] = True
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb, k in adj[node]:
                if not seen[nb]:
                    seen[nb] = True
                    parent[nb] = node
                    parc[nb] = k
                    depth[nb] = depth[node] + 1
                    pot[nb] = C[rows[k], cols[k]] - pot[node]
                    queue.append(nb)
        u = np.array(pot[:m])
        v = np.array(pot[m:])
        red = C - u[:, None] - v[None, :]
        if degenerate_run > nn:
            # Bland: first eligible arc in index order
            cand = np.flatnonzero(red.ravel() < -tol)
            if cand.size == 0:
                status = OPTIMAL
                break
            ei, ej = divmod(int(cand[0]), n)
        else:
            idx = int(np.argmin(red))
            if red.flat[idx] >= -tol:
                status = OPTIMAL
                break
            ei, ej = divmod(idx, n)
        it += 1
        # cycle through the tree: climb from both endpoints to the common ancestor
        side_s, side_t = [], []
        p, q = ei, m + ej
        while depth[p] > depth[q]:
            side_s.append(parc[p])
            p = parent[p]
        while depth[q] > depth[p]:
            side_t.append(parc[q])
            q = parent[q]
        while p != q:
            side_s.append(parc[p])
            p = parent[p]
            side_t.append(parc[q])
            q = parent[q]
        # arcs at even distance from either endpoint lose flow
        minus = side_s[0::2] + side_t[0::2]
        plus = side_s[1::2] + side_t[1::2]
        theta = min(flow[k] for k in minus)
        leave = min((k for k in minus if flow[k] == theta), key=lambda k: rows[k] * n + cols[k])
        for k in minus:
            flow[k] -= theta
        for k in plus:
            flow[k] += theta
        rows[leave] = ei
        cols[leave] = ej
        flow[leave] = theta
        degenerate_run = degenerate_run + 1 if theta == 0.0 else 0
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    flow = np.asarray(flow, dtype=float)
    # final potentials for the returned basis
    cost = float(np.dot(flow, C[rows, cols]))
    return rows, cols, flow, u, v, cost, it, status
