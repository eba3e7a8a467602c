"""Successive shortest paths with Johnson potentials.

Independent exact min-cost-flow solver used to cross-check the network
simplex on the identical FlowProblem.  All original arc costs are
non-negative, so potentials start at zero and Dijkstra runs on reduced
costs throughout.  Intended for small instances; flows are exact integers.
"""

from __future__ import annotations

import heapq

import numpy as np

from ..errors import InfeasibleError
from .network import FlowProblem

_INF = float("inf")


def solve_min_cost_flow(problem: FlowProblem):
    """Return (flows, objective_units); same contract as the simplex solver."""
    n = problem.n_nodes
    e = problem.n_arcs
    b = problem.supplies
    if int(b.sum()) != 0:
        raise InfeasibleError("node supplies do not balance")
    total_supply = int(b[b > 0].sum())
    if total_supply == 0:
        return np.zeros(e, dtype=np.int64), 0.0

    ss, tt = n, n + 1
    n2 = n + 2
    big = total_supply

    # residual arc arrays with XOR pairing: forward 2k, backward 2k+1
    head, cap, cost_arr = [], [], []
    graph = [[] for _ in range(n2)]

    def add(u, v, capacity, c):
        a = len(head)
        head.append(v)
        cap.append(capacity)
        cost_arr.append(c)
        graph[u].append(a)
        head.append(u)
        cap.append(0)
        cost_arr.append(-c)
        graph[v].append(a + 1)
        return a

    fwd = [
        add(int(problem.tails[k]), int(problem.heads[k]), big, float(problem.costs[k]))
        for k in range(e)
    ]
    for v in range(n):
        sup = int(b[v])
        if sup > 0:
            add(ss, v, sup, 0.0)
        elif sup < 0:
            add(v, tt, -sup, 0.0)

    pi = [0.0] * n2
    sent = 0
    while sent < total_supply:
        dist = [_INF] * n2
        parent_arc = [-1] * n2
        dist[ss] = 0.0
        heap = [(0.0, ss)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for a in graph[u]:
                if cap[a] <= 0:
                    continue
                v = head[a]
                nd = d + cost_arr[a] + pi[u] - pi[v]
                if nd < dist[v]:
                    dist[v] = nd
                    parent_arc[v] = a
                    heapq.heappush(heap, (nd, v))
        if dist[tt] == _INF:
            raise InfeasibleError("no augmenting path to satisfy supplies")

        bottleneck = total_supply - sent
        v = tt
        while v != ss:
            a = parent_arc[v]
            if cap[a] < bottleneck:
                bottleneck = cap[a]
            v = head[a ^ 1]
        v = tt
        while v != ss:
            a = parent_arc[v]
            cap[a] -= bottleneck
            cap[a ^ 1] += bottleneck
            v = head[a ^ 1]
        sent += bottleneck

        d_t = dist[tt]
        for u in range(n2):
            pi[u] += dist[u] if dist[u] < d_t else d_t

    flows = np.array([big - cap[a] for a in fwd], dtype=np.int64)
    nz = np.flatnonzero(flows > 0)
    objective_units = float(
        np.dot(problem.costs[nz], flows[nz].astype(np.float64))
    )
    return flows, objective_units
