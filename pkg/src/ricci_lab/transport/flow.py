"""Max-flow feasibility for couplings with a support constraint."""

from __future__ import annotations

import networkx as nx
import numpy as np
from networkx.algorithms.flow import shortest_augmenting_path


def max_flow_plan(a: np.ndarray, b: np.ndarray, allowed: np.ndarray):
    """Route as much of ``a`` onto ``b`` as possible along allowed pairs.

    Returns the partial plan and the unrouted mass.  Nodes and edges are
    inserted in index order, so the result is deterministic.
    """
    I = np.nonzero(a > 0)[0]
    J = np.nonzero(b > 0)[0]
    G = nx.DiGraph()
    G.add_node("s")
    G.add_node("t")
    for i in I:
        G.add_edge("s", ("a", int(i)), capacity=float(a[i]))
    for j in J:
        G.add_edge(("b", int(j)), "t", capacity=float(b[j]))
    sub = allowed[np.ix_(I, J)]
    ii, jj = np.nonzero(sub)
    G.add_edges_from((("a", int(I[p])), ("b", int(J[r]))) for p, r in zip(ii, jj))
    value, flow = nx.maximum_flow(G, "s", "t", flow_func=shortest_augmenting_path)
    q = np.zeros((len(a), len(b)))
    for i in I:
        for node, f in flow[("a", int(i))].items():
            if f > 0:
                q[i, node[1]] = f
    total = min(float(a.sum()), float(b.sum()))
    return q, max(0.0, total - float(q.sum()))
