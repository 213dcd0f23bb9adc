"""Independent reference computations used by the tests.

``brute_force_blocks`` assembles every bilinear form densely over all mesh
edges and nodes by tensor Gauss-Legendre quadrature on the collapsed square
(Duffy map), with edge functions built directly in global orientation. It
shares no code with the package beyond reading mesh arrays.
"""
import numpy as np
from numpy.polynomial.legendre import leggauss


def duffy_rule(order=8):
    """Points (P, 2) and weights on the reference triangle (area 1/2)."""
    t, w = leggauss(order)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    U, V = np.meshgrid(t, t, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    x = U.ravel()
    y = (V * (1 - U)).ravel()
    weights = (WU * WV * (1 - U)).ravel()
    return np.stack([x, y], axis=1), weights


def _barycentric(P, pts):
    """Barycentric coordinates and their gradients for triangle P (3, 2)."""
    T = np.array([[1, 1, 1], P[:, 0], P[:, 1]], dtype=float)
    Tinv = np.linalg.inv(T)
    lam = (Tinv @ np.vstack([np.ones(len(pts)), pts.T])).T     # (Q, 3)
    grad = Tinv[:, 1:]                                           # (3, 2)
    return lam, grad


def brute_force_blocks(mesh, eps_fn=None, mu_fn=None, order=8):
    """Dense global blocks over all edges (global low->high orientation) and nodes.

    ``eps_fn`` and ``mu_fn`` map (Q, 2) physical points to values; default 1.
    """
    eps_fn = eps_fn or (lambda X: np.ones(len(X)))
    mu_fn = mu_fn or (lambda X: np.ones(len(X)))
    ref, wref = duffy_rule(order)
    edges = sorted({tuple(sorted((int(t[a]), int(t[b]))))
                    for t in mesh.triangles for a, b in ((0, 1), (1, 2), (2, 0))})
    eid = {e: i for i, e in enumerate(edges)}
    ne, nn = len(edges), mesh.n_nodes
    out = {k: np.zeros(s) for k, s in [("C", (ne, ne)), ("Me", (ne, ne)), ("Mmu", (ne, ne)),
                                       ("G", (ne, nn)), ("D", (nn, ne)), ("Gdiv", (nn, ne)),
                                       ("Mv", (nn, nn)), ("Kv", (nn, nn))]}
    for tri in mesh.triangles:
        P = mesh.nodes[tri]
        J = np.column_stack([P[1] - P[0], P[2] - P[0]])
        detJ = abs(np.linalg.det(J))
        X = P[0] + ref @ J.T
        w = wref * detJ
        lam, grad = _barycentric(P, X)
        eps, nu = eps_fn(X), 1.0 / mu_fn(X)
        loc_edges, phis, curls = [], [], []
        for a, b in ((0, 1), (1, 2), (2, 0)):
            ga, gb = (a, b) if tri[a] < tri[b] else (b, a)     # global low -> high
            phis.append(lam[:, [ga]] * grad[gb] - lam[:, [gb]] * grad[ga])
            curls.append(2 * (grad[ga, 0] * grad[gb, 1] - grad[ga, 1] * grad[gb, 0]))
            loc_edges.append(eid[tuple(sorted((int(tri[a]), int(tri[b]))))])
        for i, ei in enumerate(loc_edges):
            for j, ej in enumerate(loc_edges):
                out["C"][ei, ej] += np.sum(w * nu * curls[i] * curls[j])
                dot = np.sum(phis[i] * phis[j], axis=1)
                out["Me"][ei, ej] += np.sum(w * eps * dot)
                out["Mmu"][ei, ej] += np.sum(w * nu * dot)
            for k in range(3):
                vk = tri[k]
                gdot = phis[i] @ grad[k]
                out["G"][ei, vk] += np.sum(w * nu * gdot)
                out["D"][vk, ei] -= np.sum(w * eps * gdot)
                out["Gdiv"][vk, ei] += np.sum(w * nu * gdot)
        for k in range(3):
            for l in range(3):
                out["Mv"][tri[k], tri[l]] += np.sum(w * eps * lam[:, k] * lam[:, l])
                out["Kv"][tri[k], tri[l]] += np.sum(w * nu) * (grad[k] @ grad[l])
    return out, edges


def restrict(blocks, edges, mesh, pec_tag="pec"):
    """Drop PEC edges and every node on a PEC edge (computed independently)."""
    pec = {tuple(sorted((int(a), int(b))))
           for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags) if t == pec_tag}
    fe = [i for i, e in enumerate(edges) if e not in pec]
    clamped = {v for e in pec for v in e}
    fv = [v for v in range(mesh.n_nodes) if v not in clamped]
    sel = {"C": (fe, fe), "Me": (fe, fe), "Mmu": (fe, fe), "G": (fe, fv), "D": (fv, fe),
           "Gdiv": (fv, fe), "Mv": (fv, fv), "Kv": (fv, fv)}
    return {k: blocks[k][np.ix_(*sel[k])] for k in blocks}
