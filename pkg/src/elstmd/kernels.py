"""Loop-heavy kernels (graph statistics, LSTM recurrences), each with a numba and a pure-numpy implementation.

The public functions take ``backend=None`` (pick numba when available) or an
explicit ``"numba"`` / ``"numpy"``. Both paths must agree; the test-suite runs
them against each other and ``benchmarks/bench_kernels.py`` times them.
"""
import numpy as np
from scipy.special import expit

from ._jit import HAVE_NUMBA, njit, resolve_backend


# --------------------------------------------------------------------------
# edge betweenness (directed, unweighted)


@njit(cache=True)
def _edge_betweenness_csr(indptr, indices, n):
    eb = np.zeros(indices.size)
    dist = np.empty(n, np.int64)
    sigma = np.empty(n)
    delta = np.empty(n)
    order = np.empty(n, np.int64)
    for s in range(n):
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        # reverse BFS order guarantees delta[w] is final before v reads it
        for k in range(tail - 1, -1, -1):
            v = order[k]
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[w] == dist[v] + 1:
                    c = sigma[v] / sigma[w] * (1.0 + delta[w])
                    eb[e] += c
                    delta[v] += c
    return eb


def _edge_betweenness_numba(adj):
    n = adj.shape[0]
    src, dst = np.nonzero(adj)
    indptr = np.zeros(n + 1, np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    eb = _edge_betweenness_csr(indptr, dst.astype(np.int64), n)
    out = np.zeros((n, n))
    out[src, dst] = eb
    return out


def _edge_betweenness_numpy(adj):
    # All sources at once, level-synchronous: row s of dist/sigma is the BFS from s.
    n = adj.shape[0]
    a = (adj != 0).astype(np.float64)
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    sigma = np.eye(n)
    frontier = np.eye(n, dtype=bool)
    level = 0
    while frontier.any():
        reach = (sigma * frontier) @ a
        frontier = (reach > 0) & (dist < 0)
        level += 1
        dist[frontier] = level
        sigma[frontier] = reach[frontier]
    delta = np.zeros((n, n))
    eb = np.zeros((n, n))
    safe_sigma = np.where(sigma > 0, sigma, 1.0)
    for d in range(level - 1, -1, -1):
        coef = np.where(dist == d + 1, (1.0 + delta) / safe_sigma, 0.0)
        at_d = np.where(dist == d, sigma, 0.0)
        delta += at_d * (coef @ a.T)
        eb += a * (at_d.T @ coef)
    return eb


def edge_betweenness_matrix(adj, backend=None):
    """Unnormalised edge betweenness; entry (i, j) is the score of link i->j (0 off the edge set)."""
    adj = np.asarray(adj)
    if resolve_backend(backend) == "numba":
        return _edge_betweenness_numba(adj)
    return _edge_betweenness_numpy(adj)


# --------------------------------------------------------------------------
# transient-link filtering


@njit(cache=True)
def _transient_keep_loop(adj, horizon):
    T, n, _ = adj.shape
    keep = np.zeros_like(adj)
    for i in range(n):
        for j in range(n):
            nxt = -1
            for k in range(T - 1, -1, -1):
                if adj[k, i, j]:
                    if k == T - 1 or (nxt >= 0 and nxt - k <= horizon):
                        keep[k, i, j] = 1
                    nxt = k
    return keep


def _transient_keep_numpy(adj, horizon):
    T = adj.shape[0]
    keep = np.zeros_like(adj)
    for k in range(T - 1):
        end = min(k + horizon, T - 1)
        keep[k] = adj[k] & adj[k + 1:end + 1].any(axis=0)
    keep[T - 1] = adj[T - 1]
    return keep


def transient_keep(adj, horizon, backend=None):
    """Mask of links that reappear within ``horizon`` later snapshots.

    The final snapshot has no lookahead and is kept as is.
    """
    adj = np.ascontiguousarray(adj, dtype=np.uint8)
    if resolve_backend(backend) == "numba":
        return _transient_keep_loop(adj, int(horizon))
    return _transient_keep_numpy(adj, int(horizon))


# --------------------------------------------------------------------------
# triangles per node on a symmetric 0/1 graph


@njit(cache=True)
def _triangles_loop(sym):
    n = sym.shape[0]
    tri = np.zeros(n)
    for v in range(n):
        t = 0
        for u in range(n):
            if sym[v, u] and u != v:
                for w in range(u + 1, n):
                    if sym[v, w] and sym[u, w] and w != v:
                        t += 1
        tri[v] = t
    return tri


def _triangles_numpy(sym):
    a = sym.astype(np.float64)
    return ((a @ a) * a).sum(axis=1) / 2.0


def node_triangles(sym, backend=None):
    sym = np.ascontiguousarray(sym, dtype=np.uint8)
    if resolve_backend(backend) == "numba":
        return _triangles_loop(sym)
    return _triangles_numpy(sym)


# --------------------------------------------------------------------------
# LSTM layer over a whole sequence (gate order f, i, C~, o in the stacked weights)


@njit(cache=True, inline="always")
def _tanh(x):
    # libm tanh is ~3x slower than expm1 here; this form stays exact near 0
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    e = np.expm1(2.0 * x)
    return e / (e + 2.0)


@njit(cache=True)
def _lstm_forward_loop(WT, b, xs, h0, C0):
    N, n, d_in = xs.shape
    d = h0.shape[1]
    Z = np.empty((N, n, d + d_in))
    G = np.empty((N, n, 4 * d))
    Cs = np.empty((N + 1, n, d))
    TC = np.empty((N, n, d))
    Hs = np.empty((N, n, d))
    Cs[0] = C0
    for t in range(N):
        if t == 0:
            Z[0, :, :d] = h0
        else:
            Z[t, :, :d] = Hs[t - 1]
        Z[t, :, d:] = xs[t]
        a = Z[t] @ WT
        for r in range(n):
            for j in range(d):
                f = 1.0 / (1.0 + np.exp(-(a[r, j] + b[j])))
                i = 1.0 / (1.0 + np.exp(-(a[r, d + j] + b[d + j])))
                g = _tanh(a[r, 2 * d + j] + b[2 * d + j])
                o = 1.0 / (1.0 + np.exp(-(a[r, 3 * d + j] + b[3 * d + j])))
                c = f * Cs[t, r, j] + i * g
                tc = _tanh(c)
                G[t, r, j] = f
                G[t, r, d + j] = i
                G[t, r, 2 * d + j] = g
                G[t, r, 3 * d + j] = o
                Cs[t + 1, r, j] = c
                TC[t, r, j] = tc
                Hs[t, r, j] = o * tc
    return Z, G, Cs, TC, Hs


def _lstm_forward_numpy(WT, b, xs, h0, C0):
    N, n, d_in = xs.shape
    d = h0.shape[1]
    Z = np.empty((N, n, d + d_in))
    G = np.empty((N, n, 4 * d))
    Cs = np.empty((N + 1, n, d))
    TC = np.empty((N, n, d))
    Hs = np.empty((N, n, d))
    Cs[0] = C0
    h = h0
    for t in range(N):
        Z[t, :, :d] = h
        Z[t, :, d:] = xs[t]
        a = Z[t] @ WT + b
        G[t] = expit(a)
        G[t, :, 2 * d:3 * d] = np.tanh(a[:, 2 * d:3 * d])
        f, i, g, o = G[t, :, :d], G[t, :, d:2 * d], G[t, :, 2 * d:3 * d], G[t, :, 3 * d:]
        Cs[t + 1] = f * Cs[t] + i * g
        TC[t] = np.tanh(Cs[t + 1])
        Hs[t] = o * TC[t]
        h = Hs[t]
    return Z, G, Cs, TC, Hs


@njit(cache=True)
def _lstm_backward_loop(W, Z, G, Cs, TC, dh_ext):
    N, n, dz = Z.shape
    d = Cs.shape[2]
    gW = np.zeros((4 * d, dz))
    gb = np.zeros(4 * d)
    dX = np.empty((N, n, dz - d))
    dh_next = np.zeros((n, d))
    dC_next = np.zeros((n, d))
    da = np.empty((n, 4 * d))
    for t in range(N - 1, -1, -1):
        for r in range(n):
            for j in range(d):
                dh = dh_ext[t, r, j] + dh_next[r, j]
                f = G[t, r, j]
                i = G[t, r, d + j]
                g = G[t, r, 2 * d + j]
                o = G[t, r, 3 * d + j]
                tc = TC[t, r, j]
                dC = dh * o * (1.0 - tc * tc) + dC_next[r, j]
                da[r, j] = dC * Cs[t, r, j] * f * (1.0 - f)
                da[r, d + j] = dC * g * i * (1.0 - i)
                da[r, 2 * d + j] = dC * i * (1.0 - g * g)
                da[r, 3 * d + j] = dh * tc * o * (1.0 - o)
                dC_next[r, j] = dC * f
        gW += np.ascontiguousarray(da.T) @ Z[t]
        gb += da.sum(axis=0)
        dzc = da @ W
        dh_next[:, :] = dzc[:, :d]
        dX[t] = dzc[:, d:]
    return gW, gb, dX


def _lstm_backward_numpy(W, Z, G, Cs, TC, dh_ext):
    N, n, dz = Z.shape
    d = Cs.shape[2]
    dX = np.empty((N, n, dz - d))
    DA = np.empty((N, n, 4 * d))
    dh_next = np.zeros((n, d))
    dC_next = np.zeros((n, d))
    for t in range(N - 1, -1, -1):
        f, i, g, o = G[t, :, :d], G[t, :, d:2 * d], G[t, :, 2 * d:3 * d], G[t, :, 3 * d:]
        tc = TC[t]
        dh = dh_ext[t] + dh_next
        dC = dh * o * (1.0 - tc * tc) + dC_next
        da = DA[t]
        da[:, :d] = dC * Cs[t] * f * (1.0 - f)
        da[:, d:2 * d] = dC * g * i * (1.0 - i)
        da[:, 2 * d:3 * d] = dC * i * (1.0 - g * g)
        da[:, 3 * d:] = dh * tc * o * (1.0 - o)
        dC_next = dC * f
        dzc = da @ W
        dh_next = dzc[:, :d]
        dX[t] = dzc[:, d:]
    flat = DA.reshape(N * n, 4 * d)
    gW = flat.T @ Z.reshape(N * n, dz)
    return gW, flat.sum(axis=0), dX


def lstm_layer_forward(W, b, xs, h0, C0, backend=None):
    """Run one LSTM layer over ``xs`` (N, n, d_in) from state (h0, C0).

    Returns ``(Z, G, Cs, TC, Hs)``: the ``[h_prev, x]`` inputs (N, n, d+d_in),
    activated gates (N, n, 4d), cell states including C0 (N+1, n, d),
    tanh of the cell states (N, n, d) and hidden states (N, n, d).

    Unlike the other kernels this defaults to the numpy path even when numba is
    available: the step is dominated by exp/tanh, which numpy evaluates with
    SIMD while numba falls back to scalar libm calls.
    """
    WT = np.ascontiguousarray(W.T)
    b = np.ascontiguousarray(b.reshape(-1))
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    C0 = np.ascontiguousarray(C0, dtype=np.float64)
    if backend is not None and resolve_backend(backend) == "numba":
        return _lstm_forward_loop(WT, b, xs, h0, C0)
    return _lstm_forward_numpy(WT, b, xs, h0, C0)


def lstm_layer_backward(W, Z, G, Cs, TC, dh_ext, backend=None):
    """BPTT through one layer given upstream gradients on every hidden state.

    Returns ``(dW, db, dX)`` with ``dX`` the gradient on the layer inputs.
    """
    W = np.ascontiguousarray(W)
    dh_ext = np.ascontiguousarray(dh_ext, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _lstm_backward_loop(W, Z, G, Cs, TC, dh_ext)
    return _lstm_backward_numpy(W, Z, G, Cs, TC, dh_ext)


def available_backends():
    return ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
