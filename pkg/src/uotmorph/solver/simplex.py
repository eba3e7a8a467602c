"""Primal network simplex for uncapacitated min-cost flow on integer supplies.

Flows are kept as exact Python integers; arc costs are float64.  The basis
is a spanning tree stored with parent/thread/size arrays, initialized from
an artificial root with big-M arcs (strongly feasible start).  The entering
arc is chosen by a candidate-list rule: arcs are scanned cyclically in
fixed index order in blocks of ~sqrt(m), taking the most negative reduced
cost within a block, ties broken by lowest arc index.  The leaving arc is
the last blocking arc around the cycle, which preserves strong feasibility
and prevents cycling.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InfeasibleError, SolverError
from .network import FlowProblem


def solve_min_cost_flow(problem: FlowProblem):
    """Return (flows, objective_units) for the given problem.

    ``flows`` is an int64 array over the problem's arcs; ``objective_units``
    is the float cost of the flow in quantization units.
    """
    n = problem.n_nodes
    e = problem.n_arcs
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    b = problem.supplies
    if int(b.sum()) != 0:
        raise InfeasibleError("node supplies do not balance")

    root = n
    max_cost = float(np.max(problem.costs)) if e else 0.0
    faux = 1.0 + 3.0 * (n + 1) * max(max_cost, 1.0)

    # arc arrays; artificial arcs live at indices e..e+n-1
    S = np.empty(e + n, dtype=np.int64)
    T = np.empty(e + n, dtype=np.int64)
    C = np.empty(e + n, dtype=np.float64)
    S[:e] = problem.tails
    T[:e] = problem.heads
    C[:e] = problem.costs
    C[e:] = faux

    x = [0] * (e + n)
    pi = np.zeros(n + 1, dtype=np.float64)
    for v in range(n):
        sup = int(b[v])
        if sup < 0:
            S[e + v] = root
            T[e + v] = v
            pi[v] = -faux
        else:
            S[e + v] = v
            T[e + v] = root
            pi[v] = faux
        x[e + v] = abs(sup)
    pi[root] = 0.0

    parent = [root] * n + [None]
    edge = [e + v for v in range(n)] + [None]
    size = [1] * n + [n + 1]
    next_ = list(range(1, n)) + [root, 0]
    prev = [root] + list(range(0, n - 1)) + [n - 1]
    last = list(range(n)) + [n - 1]

    tol = 1e-11 * (1.0 + max_cost)

    block = int(math.ceil(math.sqrt(e))) if e else 0
    n_blocks = (e + block - 1) // block if block else 0

    scan_start = 0

    def find_entering():
        nonlocal scan_start
        if e == 0:
            return -1
        misses = 0
        f = scan_start
        while misses < n_blocks:
            l = f + block
            if l <= e:
                idx0 = f
                rc = C[f:l] - pi[S[f:l]] + pi[T[f:l]]
                k = int(np.argmin(rc))
                best = rc[k]
                best_idx = idx0 + k
            else:
                l -= e
                rc1 = C[f:e] - pi[S[f:e]] + pi[T[f:e]]
                rc2 = C[:l] - pi[S[:l]] + pi[T[:l]]
                k1 = int(np.argmin(rc1)) if len(rc1) else -1
                k2 = int(np.argmin(rc2)) if len(rc2) else -1
                # on ties prefer the wrapped segment: lower global arc index
                if k2 < 0 or (k1 >= 0 and rc1[k1] < rc2[k2]):
                    best = rc1[k1]
                    best_idx = f + k1
                else:
                    best = rc2[k2]
                    best_idx = k2
            f = l % e if e else 0
            if best < -tol:
                scan_start = f
                return best_idx
            misses += 1
        return -1

    def find_apex(p, q):
        sp, sq = size[p], size[q]
        while True:
            while sp < sq:
                p = parent[p]
                sp = size[p]
            while sp > sq:
                q = parent[q]
                sq = size[q]
            if sp == sq:
                if p == q:
                    return p
                p = parent[p]
                sp = size[p]
                q = parent[q]
                sq = size[q]

    def trace_path(p, w):
        nodes = [p]
        arcs = []
        while p != w:
            arcs.append(edge[p])
            p = parent[p]
            nodes.append(p)
        return nodes, arcs

    def find_cycle(i, p, q):
        w = find_apex(p, q)
        nodes, arcs = trace_path(p, w)
        nodes.reverse()
        arcs.reverse()
        arcs.append(i)
        nodes_r, arcs_r = trace_path(q, w)
        del nodes_r[-1]
        nodes += nodes_r
        arcs += arcs_r
        return nodes, arcs

    def residual(i, p):
        # direction away from p along the cycle; forward arcs are uncapacitated
        return None if S[i] == p else x[i]

    def find_leaving(Wn, We):
        j = s = None
        best = None
        for arc, node in zip(reversed(We), reversed(Wn)):
            r = residual(arc, node)
            if r is None:
                continue
            if best is None or r < best:
                best, j, s = r, arc, node
        if j is None:
            raise SolverError("unbounded flow (negative cycle of forward arcs)")
        t = int(T[j]) if S[j] == s else int(S[j])
        return j, s, t, best

    def augment(Wn, We, f):
        for arc, node in zip(We, Wn):
            if S[arc] == node:
                x[arc] += f
            else:
                x[arc] -= f

    def subtree_nodes(p):
        out = [p]
        l = last[p]
        while p != l:
            p = next_[p]
            out.append(p)
        return out

    def remove_edge(s, t):
        size_t = size[t]
        prev_t = prev[t]
        last_t = last[t]
        next_last_t = next_[last_t]
        parent[t] = None
        edge[t] = None
        next_[prev_t] = next_last_t
        prev[next_last_t] = prev_t
        next_[last_t] = t
        prev[t] = last_t
        while s is not None:
            size[s] -= size_t
            if last[s] == last_t:
                last[s] = prev_t
            s = parent[s]

    def make_root(q):
        ancestors = []
        while q is not None:
            ancestors.append(q)
            q = parent[q]
        ancestors.reverse()
        for p, q in zip(ancestors, ancestors[1:]):
            size_p = size[p]
            last_p = last[p]
            prev_q = prev[q]
            last_q = last[q]
            next_last_q = next_[last_q]
            parent[p] = q
            parent[q] = None
            edge[p] = edge[q]
            edge[q] = None
            size[p] = size_p - size[q]
            size[q] = size_p
            next_[prev_q] = next_last_q
            prev[next_last_q] = prev_q
            next_[last_q] = q
            prev[q] = last_q
            if last_p == last_q:
                last[p] = prev_q
                last_p = prev_q
            prev[p] = last_q
            next_[last_q] = p
            next_[last_p] = q
            prev[q] = last_p
            last[q] = last_p

    def add_edge(i, p, q):
        last_p = last[p]
        next_last_p = next_[last_p]
        size_q = size[q]
        last_q = last[q]
        parent[q] = p
        edge[q] = i
        next_[last_p] = q
        prev[q] = last_p
        prev[next_last_p] = last_q
        next_[last_q] = next_last_p
        while p is not None:
            size[p] += size_q
            if last[p] == last_p:
                last[p] = last_q
            p = parent[p]

    def update_potentials(i, p, q):
        if q == T[i]:
            d = pi[p] - C[i] - pi[q]
        else:
            d = pi[p] + C[i] - pi[q]
        nodes = subtree_nodes(q)
        pi[np.asarray(nodes, dtype=np.int64)] += d

    def refresh_potentials():
        # exact potentials from the tree: thread order visits parents first
        pi[root] = 0.0
        v = next_[root]
        while v != root:
            a = edge[v]
            pv = parent[v]
            if T[a] == v:
                pi[v] = pi[pv] - C[a]
            else:
                pi[v] = pi[pv] + C[a]
            v = next_[v]

    refresh_every = max(64, n)
    pivots = 0
    while True:
        i = find_entering()
        if i < 0:
            break
        p, q = int(S[i]), int(T[i])
        Wn, We = find_cycle(i, p, q)
        j, s, t, flow = find_leaving(Wn, We)
        if flow > 0:
            augment(Wn, We, flow)
        if i != j:
            if parent[t] != s:
                s, t = t, s
            if We.index(i) > We.index(j):
                p, q = q, p
            remove_edge(s, t)
            make_root(q)
            add_edge(i, p, q)
            update_potentials(i, p, q)
        pivots += 1
        if pivots % refresh_every == 0:
            refresh_potentials()

    if any(x[e + v] != 0 for v in range(n)):
        raise InfeasibleError("no flow satisfies the node supplies")

    flows = np.asarray(x[:e], dtype=np.int64)
    nz = np.flatnonzero(flows > 0)
    objective_units = float(np.dot(C[nz], flows[nz].astype(np.float64)))
    return flows, objective_units
