"""Compiled inner loops: regression-tree growth, the epsilon-SVR SMO solver and Khachiyan's MVE iteration."""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _next_u64(state):
    # splitmix64
    state[0] = (state[0] + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state[0]
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randint(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def grow_tree(X, y, order, samples, mtry, min_leaf, max_depth, seed):
    """Grow one CART regression tree on the rows listed in ``samples``.

    ``order[f]`` is the ascending sort order of column ``f`` over all rows of
    ``X``; nodes scan it with per-row multiplicities instead of re-sorting.
    Returns node arrays (feature, threshold, left, right, value, n_node,
    gain); ``feature == -1`` marks a leaf.  ``gain`` is the decrease in summed
    squared error produced by the node's split.
    """
    n_rows = X.shape[0]
    n_feat = X.shape[1]
    m_total = samples.shape[0]
    cap = 2 * m_total + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_node = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)

    state = np.zeros(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    idx = samples.copy()
    perm = np.arange(n_feat)
    count = np.zeros(n_rows, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m_total
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        m = hi - lo

        s = 0.0
        for k in range(lo, hi):
            s += y[idx[k]]
        mean = s / m
        sse = 0.0
        for k in range(lo, hi):
            r = y[idx[k]] - mean
            sse += r * r
        value[node] = mean
        n_node[node] = m

        if m < 2 * min_leaf or sse <= 1e-12 * (1.0 + mean * mean) * m or (max_depth >= 0 and depth >= max_depth):
            continue

        # Fisher-Yates shuffle of candidate features for this node
        for k in range(n_feat - 1, 0, -1):
            r = _randint(state, k + 1)
            t = perm[k]
            perm[k] = perm[r]
            perm[r] = t

        for k in range(lo, hi):
            count[idx[k]] += 1

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        visited = 0
        for fi in range(n_feat):
            if visited >= mtry and best_feat >= 0:
                break
            f = perm[fi]
            nl = 0
            left_sum = 0.0
            prev = 0.0
            first = 0.0
            split_seen = False
            for q in range(n_rows):
                row = order[f, q]
                c = count[row]
                if c == 0:
                    continue
                v = X[row, f]
                if nl == 0:
                    first = v
                elif v != prev:
                    split_seen = True
                    if nl >= min_leaf:
                        nr = m - nl
                        if nr < min_leaf:
                            break
                        right_sum = s - left_sum
                        score = left_sum * left_sum / nl + right_sum * right_sum / nr
                        if score > best_score + 1e-12 * abs(best_score):
                            best_score = score
                            best_feat = f
                            thr = 0.5 * (prev + v)
                            if thr >= v:
                                thr = prev
                            best_thr = thr
                nl += c
                left_sum += c * y[row]
                prev = v
                if m - nl < min_leaf and split_seen and nl >= min_leaf:
                    break
            if split_seen or prev != first:
                visited += 1  # constant columns do not count towards mtry

        for k in range(lo, hi):
            count[idx[k]] = 0

        if best_feat < 0:
            continue

        # partition idx[lo:hi] on the chosen split
        i = lo
        j = hi - 1
        while i <= j:
            if X[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                t = idx[i]
                idx[i] = idx[j]
                idx[j] = t
                j -= 1
        mid = i
        if mid - lo < min_leaf or hi - mid < min_leaf:
            continue

        sl = 0.0
        for k in range(lo, mid):
            sl += y[idx[k]]
        sr = s - sl
        nl = mid - lo
        nr = hi - mid
        # SSE decrease = between-group sum of squares
        gain[node] = sl * sl / nl + sr * sr / nr - s * s / m
        if gain[node] < 0.0:
            gain[node] = 0.0
        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        stack_node[top] = rnode
        stack_lo[top] = mid
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = lnode
        stack_lo[top] = lo
        stack_hi[top] = mid
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        n_node[:n_nodes].copy(),
        gain[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out


@njit(cache=True, nogil=True)
def smo_svr(K, y, C, eps, tol, max_iter):
    """Solve the epsilon-SVR dual with second-order working-set selection.

    Variables are ``a = [alpha, alpha*]`` (length 2n) with labels
    ``s = [+1, -1]``; the problem is

        min 1/2 a^T Q a + p^T a,  s^T a = 0,  0 <= a <= C,

    with ``Q_tu = s_t s_u K_tu`` and ``p = [eps - y, eps + y]``.
    Returns ``(alpha, alpha_star, rho, gap, n_iter)``; the decision function is
    ``sum_i (alpha_i - alpha*_i) K(x_i, x) - rho``.
    """
    n = y.shape[0]
    l = 2 * n
    a = np.zeros(l)
    s = np.empty(l)
    G = np.empty(l)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        G[t] = eps - y[t]
        G[t + n] = eps + y[t]
    tau = 1e-12
    gap = np.inf
    it = 0
    while it < max_iter:
        # select i: argmax over I_up of -s_t G_t
        gmax = -np.inf
        i = -1
        for t in range(l):
            if (s[t] > 0 and a[t] < C) or (s[t] < 0 and a[t] > 0):
                v = -s[t] * G[t]
                if v >= gmax:
                    gmax = v
                    i = t
        gmin = np.inf
        j = -1
        obj_min = np.inf
        if i >= 0:
            ki = i % n
            Qii = K[ki, ki]
            for t in range(l):
                if (s[t] > 0 and a[t] > 0) or (s[t] < 0 and a[t] < C):
                    v = -s[t] * G[t]
                    if v <= gmin:
                        gmin = v
                    b = gmax - v
                    if b > 0:
                        kt = t % n
                        quad = Qii + K[kt, kt] - 2.0 * K[ki, kt]
                        if quad <= 0:
                            quad = tau
                        cand = -(b * b) / quad
                        if cand <= obj_min:
                            obj_min = cand
                            j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap < tol:
            break
        it += 1

        ki = i % n
        kj = j % n
        Qij = s[i] * s[j] * K[ki, kj]
        Qii = K[ki, ki]
        Qjj = K[kj, kj]
        old_ai = a[i]
        old_aj = a[j]
        if s[i] != s[j]:
            quad = Qii + Qjj + 2.0 * Qij
            if quad <= 0:
                quad = tau
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = Qii + Qjj - 2.0 * Qij
            if quad <= 0:
                quad = tau
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total
        dai = a[i] - old_ai
        daj = a[j] - old_aj
        for t in range(l):
            kt = t % n
            G[t] += s[t] * (s[i] * K[kt, ki] * dai + s[j] * K[kt, kj] * daj)

    # rho from free variables, otherwise midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    acc = 0.0
    n_free = 0
    for t in range(l):
        yg = s[t] * G[t]
        if a[t] >= C:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            acc += yg
    if n_free > 0:
        rho = acc / n_free
    else:
        rho = 0.5 * (ub + lb)
    return a[:n].copy(), a[n:].copy(), rho, gap, it


@njit(cache=True, nogil=True)
def khachiyan(q, tol, max_iter):
    """Khachiyan iteration on lifted points ``q`` (n, d+1).

    Returns ``(u, M, n_iter, converged)``; ``M`` belongs to the returned ``u``.
    """
    n, dim = q.shape
    u = np.full(n, 1.0 / n)
    M = np.empty(n)
    excess = 0.0
    for it in range(max_iter + 1):
        X = np.zeros((dim, dim))
        for i in range(n):
            for a in range(dim):
                for b in range(dim):
                    X[a, b] += u[i] * q[i, a] * q[i, b]
        Xi = np.linalg.inv(X)
        j = 0
        for i in range(n):
            m = 0.0
            for a in range(dim):
                t = 0.0
                for b in range(dim):
                    t += Xi[a, b] * q[i, b]
                m += q[i, a] * t
            M[i] = m
            if m > M[j]:
                j = i
        excess = M[j] - dim
        if excess <= tol:
            return u, M, it, True
        if it == max_iter:
            break
        step = excess / (dim * (M[j] - 1.0))
        for i in range(n):
            u[i] *= 1.0 - step
        u[j] += step
    return u, M, max_iter, False
