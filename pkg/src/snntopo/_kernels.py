"""Compiled graph kernels on CSR adjacency (``indptr``, ``indices``).

Undirected kernels expect a simple graph with both directions stored.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def core_numbers(indptr, indices):
    """Batagelj-Zaversnik bucket algorithm, O(|V| + |E|)."""
    n = indptr.size - 1
    deg = np.empty(n, dtype=np.int64)
    max_deg = 0
    for v in range(n):
        deg[v] = indptr[v + 1] - indptr[v]
        if deg[v] > max_deg:
            max_deg = deg[v]
    bin_start = np.zeros(max_deg + 1, dtype=np.int64)
    for v in range(n):
        bin_start[deg[v]] += 1
    start = 0
    for d in range(max_deg + 1):
        count = bin_start[d]
        bin_start[d] = start
        start += count
    pos = np.empty(n, dtype=np.int64)
    vert = np.empty(n, dtype=np.int64)
    for v in range(n):
        pos[v] = bin_start[deg[v]]
        vert[pos[v]] = v
        bin_start[deg[v]] += 1
    for d in range(max_deg, 0, -1):
        bin_start[d] = bin_start[d - 1]
    if max_deg >= 0 and n > 0:
        bin_start[0] = 0
    for i in range(n):
        v = vert[i]
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            if deg[u] > deg[v]:
                du = deg[u]
                pu = pos[u]
                pw = bin_start[du]
                w = vert[pw]
                if u != w:
                    pos[u] = pw
                    vert[pu] = w
                    pos[w] = pu
                    vert[pw] = u
                bin_start[du] += 1
                deg[u] -= 1
    return deg


@njit(cache=True, nogil=True)
def lowlink(indptr, indices):
    """Iterative DFS: component labels, articulation flags and bridge count."""
    n = indptr.size - 1
    disc = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    comp = np.full(n, -1, dtype=np.int64)
    is_cut = np.zeros(n, dtype=np.bool_)
    cursor = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    timer = 0
    n_comp = 0
    n_bridges = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        top = 0
        stack[0] = root
        disc[root] = timer
        low[root] = timer
        timer += 1
        comp[root] = n_comp
        cursor[root] = indptr[root]
        root_children = 0
        while top >= 0:
            v = stack[top]
            if cursor[v] < indptr[v + 1]:
                u = indices[cursor[v]]
                cursor[v] += 1
                if disc[u] == -1:
                    parent[u] = v
                    disc[u] = timer
                    low[u] = timer
                    timer += 1
                    comp[u] = n_comp
                    cursor[u] = indptr[u]
                    top += 1
                    stack[top] = u
                    if v == root:
                        root_children += 1
                elif u != parent[v]:
                    if disc[u] < low[v]:
                        low[v] = disc[u]
            else:
                top -= 1
                p = parent[v]
                if p != -1:
                    if low[v] < low[p]:
                        low[p] = low[v]
                    if low[v] > disc[p]:
                        n_bridges += 1
                    if p != root and low[v] >= disc[p]:
                        is_cut[p] = True
        if root_children > 1:
            is_cut[root] = True
        n_comp += 1
    return comp, n_comp, is_cut, n_bridges


@njit(cache=True, nogil=True)
def khop_counts(indptr, indices, k):
    """Number of distinct nodes reachable in 1..k forward hops, self excluded."""
    n = indptr.size - 1
    out = np.zeros(n, dtype=np.int64)
    stamp = np.full(n, -1, dtype=np.int64)
    frontier = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    for s in range(n):
        stamp[s] = s
        nf = 1
        frontier[0] = s
        total = 0
        for _ in range(k):
            nn = 0
            for a in range(nf):
                v = frontier[a]
                for j in range(indptr[v], indptr[v + 1]):
                    u = indices[j]
                    if stamp[u] != s:
                        stamp[u] = s
                        nxt[nn] = u
                        nn += 1
            total += nn
            if nn == 0:
                break
            for a in range(nn):
                frontier[a] = nxt[a]
            nf = nn
        out[s] = total
    return out


@njit(cache=True, nogil=True)
def _cover(indptr, indices, cover, v, delta):
    cover[v] += delta
    for j in range(indptr[v], indptr[v + 1]):
        cover[indices[j]] += delta


@njit(cache=True, nogil=True)
def esu_count(indptr, indices, k, probs, seed):
    """Connected induced k-node subgraphs (k = 3 or 4) by ESU enumeration.

    ``probs[d]`` is the probability of descending into a child at depth
    ``d`` (0 = root choice); the final level is always counted exactly.
    Returns the raw (unscaled) count of enumerated leaves.
    """
    np.random.seed(seed)
    n = indptr.size - 1
    cover = np.zeros(n, dtype=np.int64)
    max_deg = 0
    for v in range(n):
        d = indptr[v + 1] - indptr[v]
        if d > max_deg:
            max_deg = d
    ext1 = np.empty(max_deg, dtype=np.int64)
    ext2 = np.empty(2 * max_deg, dtype=np.int64)
    count = 0
    for v in range(n):
        if probs[0] < 1.0 and np.random.random() >= probs[0]:
            continue
        n1 = 0
        for j in range(indptr[v], indptr[v + 1]):
            u = indices[j]
            if u > v:
                ext1[n1] = u
                n1 += 1
        if n1 == 0:
            continue
        _cover(indptr, indices, cover, v, 1)
        for a in range(n1):
            w1 = ext1[a]
            if k == 3:
                # remaining siblings plus exclusive neighbours of w1
                c = n1 - a - 1
                for j in range(indptr[w1], indptr[w1 + 1]):
                    u = indices[j]
                    if u > v and cover[u] == 0:
                        c += 1
                count += c
                continue
            if probs[1] < 1.0 and np.random.random() >= probs[1]:
                continue
            n2 = 0
            for b in range(a + 1, n1):
                ext2[n2] = ext1[b]
                n2 += 1
            for j in range(indptr[w1], indptr[w1 + 1]):
                u = indices[j]
                if u > v and cover[u] == 0:
                    ext2[n2] = u
                    n2 += 1
            if n2 == 0:
                continue
            _cover(indptr, indices, cover, w1, 1)
            for b in range(n2):
                w2 = ext2[b]
                if probs[2] < 1.0 and np.random.random() >= probs[2]:
                    continue
                c = n2 - b - 1
                for j in range(indptr[w2], indptr[w2 + 1]):
                    u = indices[j]
                    if u > v and cover[u] == 0:
                        c += 1
                count += c
            _cover(indptr, indices, cover, w1, -1)
        _cover(indptr, indices, cover, v, -1)
    return count
