"""Lowest-order edge elements for the transverse field, P1 for the axial one.

Unknowns live in H0(curl) x H0^1 over the cross-section: one coefficient per
free (non-PEC) edge for the transverse field and one per free vertex for the
scaled axial field ``iβ E3``.  Edge dofs come first in every global vector.

Edge basis on triangle with barycentrics λ: for the local edge a -> b,
``φ = λa ∇λb - λb ∇λa``; its tangential line integral along a -> b is one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .mesh import LOCAL_EDGES, PEC

_S15 = np.sqrt(15.0)
_A1, _A2 = (6 - _S15) / 21, (6 + _S15) / 21
_B1, _B2 = (9 + 2 * _S15) / 21, (9 - 2 * _S15) / 21
_W1, _W2 = (155 - _S15) / 1200, (155 + _S15) / 1200

# 7-point symmetric rule, exact to degree 5; weights sum to one
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
    [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2],
])
QUAD_WEIGHTS = np.array([9 / 40, _W1, _W1, _W1, _W2, _W2, _W2])

# 3-point Gauss-Legendre on [0, 1] for edge line integrals
_GL_T = np.array([0.5 - _S15 / 10, 0.5, 0.5 + _S15 / 10])
_GL_W = np.array([5 / 18, 8 / 18, 5 / 18])

BLOCK_NAMES = ("C", "Me", "Mmu", "G", "D", "Gdiv", "Mv", "Kv")
SYMMETRIC_BLOCKS = ("C", "Me", "Mmu", "Mv", "Kv")


def triangle_geometry(coords):
    """Areas (M,) and barycentric gradients (M, 3, 2) for coords (M, 3, 2)."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 3, 2)
    x, y = coords[..., 0], coords[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    grad = np.empty((len(coords), 3, 2))
    with np.errstate(divide="ignore", invalid="ignore"):   # degenerate cells are rejected by callers
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            grad[:, i, 0] = (y[:, j] - y[:, k]) / (2 * area)
            grad[:, i, 1] = (x[:, k] - x[:, j]) / (2 * area)
    return area, grad


def edge_basis(grad, bary):
    """Local edge functions at barycentric points.

    Returns values (M, Q, 3, 2) and the constant curls (M, 3).
    """
    bary = np.asarray(bary, dtype=float).reshape(-1, 3)
    vals = np.empty((grad.shape[0], len(bary), 3, 2))
    curls = np.empty((grad.shape[0], 3))
    for k, (a, b) in enumerate(LOCAL_EDGES):
        vals[:, :, k, :] = (bary[None, :, a, None] * grad[:, None, b, :]
                            - bary[None, :, b, None] * grad[:, None, a, :])
        curls[:, k] = 2 * (grad[:, a, 0] * grad[:, b, 1] - grad[:, a, 1] * grad[:, b, 0])
    return vals, curls


@dataclass(frozen=True)
class LocalBlocks:
    """Element matrices in local orientation; index order as in BLOCK_NAMES."""

    C: np.ndarray
    Me: np.ndarray
    Mmu: np.ndarray
    G: np.ndarray
    D: np.ndarray
    Gdiv: np.ndarray
    Mv: np.ndarray
    Kv: np.ndarray


def _batched_local_blocks(coords, eps, mu):
    area, grad = triangle_geometry(coords)
    if np.any(area <= 0):
        raise ValidationError("degenerate or clockwise triangle")
    eps = np.asarray(eps, dtype=float).reshape(len(area), -1)
    nu = 1.0 / np.asarray(mu, dtype=float).reshape(len(area), -1)
    phi, curl = edge_basis(grad, QUAD_BARY)
    lam = QUAD_BARY
    w = QUAD_WEIGHTS[None, :] * area[:, None]          # (M, Q)
    we, wn = w * eps, w * nu

    out = {}
    out["C"] = np.einsum("mq,mi,mj->mij", wn, curl, curl)
    out["Me"] = np.einsum("mq,mqid,mqjd->mij", we, phi, phi)
    out["Mmu"] = np.einsum("mq,mqid,mqjd->mij", wn, phi, phi)
    out["G"] = np.einsum("mq,mqid,mkd->mik", wn, phi, grad)
    out["D"] = -np.einsum("mq,mqjd,mkd->mkj", we, phi, grad)
    out["Gdiv"] = np.einsum("mq,mqjd,mkd->mkj", wn, phi, grad)
    out["Mv"] = np.einsum("mq,qk,ql->mkl", we, lam, lam)
    out["Kv"] = np.einsum("mq,mkd,mld->mkl", wn, grad, grad)
    for name in SYMMETRIC_BLOCKS:
        out[name] = 0.5 * (out[name] + out[name].transpose(0, 2, 1))
    return out


def local_element_matrices(tri_coords, eps_at_quad=1.0, mu_at_quad=1.0):
    """Element matrices of one triangle.

    ``eps_at_quad`` and ``mu_at_quad`` are scalars or length-7 arrays of
    material values at the quadrature points ``QUAD_BARY``.
    """
    eps = np.broadcast_to(np.asarray(eps_at_quad, dtype=float), (len(QUAD_WEIGHTS),))
    mu = np.broadcast_to(np.asarray(mu_at_quad, dtype=float), (len(QUAD_WEIGHTS),))
    if np.any(eps <= 0) or np.any(mu <= 0):
        raise ValidationError("material values must be positive")
    blocks = _batched_local_blocks(np.asarray(tri_coords)[None], eps[None], mu[None])
    return LocalBlocks(**{k: v[0] for k, v in blocks.items()})


@dataclass(frozen=True, eq=False)
class DofMap:
    """Free edges and vertices; edge dofs are numbered before vertex dofs."""

    free_edges: np.ndarray
    free_vertices: np.ndarray
    edge_index: np.ndarray
    vertex_index: np.ndarray
    pec_tags: tuple

    @property
    def n_e(self):
        return len(self.free_edges)

    @property
    def n_v(self):
        return len(self.free_vertices)

    @property
    def size(self):
        return self.n_e + self.n_v

    def split(self, x):
        """Split a global vector into (edge part, vertex part)."""
        return x[:self.n_e], x[self.n_e:]

    def expand_edges(self, u):
        """Free-edge vector -> vector over all mesh edges (zeros on PEC)."""
        full = np.zeros(len(self.edge_index), dtype=np.result_type(u, float))
        full[self.free_edges] = u
        return full

    def expand_vertices(self, p):
        full = np.zeros(len(self.vertex_index), dtype=np.result_type(p, float))
        full[self.free_vertices] = p
        return full


def build_dofmap(mesh, pec_tags=(PEC,)):
    """Eliminate tangential and axial unknowns on PEC edges.

    Raises if an edge with a single incident triangle (outer boundary or slit
    side) is not PEC: the cross-section must be enclosed by a conductor.
    """
    pec_tags = tuple(pec_tags)
    if not pec_tags:
        raise ValidationError("at least one PEC tag is required")
    pec_edges = mesh.tagged_edge_ids(pec_tags)
    is_pec = np.zeros(mesh.n_edges, dtype=bool)
    is_pec[pec_edges] = True
    open_edges = mesh.outer_edge_ids()[~is_pec[mesh.outer_edge_ids()]]
    if len(open_edges):
        a, b = mesh.edge_table.edges[open_edges[0]]
        raise ValidationError(f"{len(open_edges)} outer boundary edge(s) not PEC-tagged, "
                              f"e.g. ({a}, {b}); the domain must be enclosed")
    free_edges = np.flatnonzero(~is_pec)

    clamped = np.zeros(mesh.n_nodes, dtype=bool)
    clamped[mesh.edge_table.edges[pec_edges].ravel()] = True
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.triangles.ravel()] = True
    free_vertices = np.flatnonzero(used & ~clamped)

    edge_index = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_index[free_edges] = np.arange(len(free_edges))
    vertex_index = np.full(mesh.n_nodes, -1, dtype=np.int64)
    vertex_index[free_vertices] = np.arange(len(free_vertices))
    return DofMap(free_edges, free_vertices, edge_index, vertex_index, pec_tags)


@dataclass(frozen=True, eq=False)
class PencilBlocks:
    """Sparse bilinear-form blocks over free dofs (CSR, real)."""

    C: sp.csr_matrix
    Me: sp.csr_matrix
    Mmu: sp.csr_matrix
    G: sp.csr_matrix
    D: sp.csr_matrix
    Gdiv: sp.csr_matrix
    Mv: sp.csr_matrix
    Kv: sp.csr_matrix
    dofmap: DofMap

    @property
    def n_e(self):
        return self.dofmap.n_e

    @property
    def n_v(self):
        return self.dofmap.n_v


def _scatter(local, rows, cols, shape):
    """Sum (M, r, c) local matrices into a sparse matrix, skipping index -1."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    v = local.ravel()
    keep = (r >= 0) & (c >= 0)
    return sp.coo_matrix((v[keep], (r[keep], c[keep])), shape=shape).tocsr()


def assemble_blocks(mesh, dofmap, materials):
    """Assemble the eight global blocks.

    The sign of the divergence coupling comes from integrating
    ``div(eps E) + eps E3~ = 0`` by parts against H0^1 test functions:
    ``D[k, j] = -<eps phi_j, grad psi_k>``.
    """
    eps, mu = materials.evaluate(mesh, QUAD_BARY)
    coords = mesh.nodes[mesh.triangles]
    local = _batched_local_blocks(coords, eps, mu)

    signs = mesh.edge_table.tri_signs.astype(float)
    erows = dofmap.edge_index[mesh.edge_table.tri_edges]
    vrows = dofmap.vertex_index[mesh.triangles]
    ne, nv = dofmap.n_e, dofmap.n_v

    ss = signs[:, :, None] * signs[:, None, :]
    blocks = {
        "C": _scatter(local["C"] * ss, erows, erows, (ne, ne)),
        "Me": _scatter(local["Me"] * ss, erows, erows, (ne, ne)),
        "Mmu": _scatter(local["Mmu"] * ss, erows, erows, (ne, ne)),
        "G": _scatter(local["G"] * signs[:, :, None], erows, vrows, (ne, nv)),
        "D": _scatter(local["D"] * signs[:, None, :], vrows, erows, (nv, ne)),
        "Gdiv": _scatter(local["Gdiv"] * signs[:, None, :], vrows, erows, (nv, ne)),
        "Mv": _scatter(local["Mv"], vrows, vrows, (nv, nv)),
        "Kv": _scatter(local["Kv"], vrows, vrows, (nv, nv)),
    }
    for name in SYMMETRIC_BLOCKS:
        S = blocks[name]
        blocks[name] = ((S + S.T) * 0.5).tocsr()
    for S in blocks.values():
        S.sort_indices()
    return PencilBlocks(dofmap=dofmap, **blocks)


def _zeros(shape):
    return sp.csr_matrix(shape)


def pencil_vd1(blocks, omega):
    """Pencil (A1, B1) of the curl-curl / Gauss-law system; λ = β².

    Row 1: (C - ω²Me) u + G p = -λ Mmu u
    Row 2: D u + Mv p = 0
    """
    ne, nv = blocks.n_e, blocks.n_v
    A = sp.bmat([[blocks.C - omega ** 2 * blocks.Me, blocks.G],
                 [blocks.D, blocks.Mv]], format="csr")
    B = sp.bmat([[-blocks.Mmu, _zeros((ne, nv))],
                 [_zeros((nv, ne)), _zeros((nv, nv))]], format="csr")
    return A, B


def pencil_vd2(blocks, omega):
    """Pencil (A2, B2) of the curl-curl / axial Helmholtz system; λ = β².

    Row 2: (-Kv + ω²Mv) p = λ Gdiv u
    """
    ne, nv = blocks.n_e, blocks.n_v
    A = sp.bmat([[blocks.C - omega ** 2 * blocks.Me, blocks.G],
                 [_zeros((nv, ne)), -blocks.Kv + omega ** 2 * blocks.Mv]], format="csr")
    B = sp.bmat([[-blocks.Mmu, _zeros((ne, nv))],
                 [blocks.Gdiv, _zeros((nv, nv))]], format="csr")
    return A, B


def scalar_helmholtz(blocks, omega):
    """Discrete Dirichlet operator of -div(mu^-1 grad) - ω² eps."""
    return (blocks.Kv - omega ** 2 * blocks.Mv).tocsr()


def transverse_operator(blocks, omega):
    return (blocks.C - omega ** 2 * blocks.Me).tocsr()


def a_orth(blocks, omega, x, y):
    """Hermitian form conj(y)^T (C - ω²Me) x."""
    return np.vdot(y, transverse_operator(blocks, omega) @ x)


def gradient_matrix(mesh, dofmap):
    """Edge coefficients of grad(psi_k): +1 at the edge's high end, -1 at the low end."""
    edges = mesh.edge_table.edges[dofmap.free_edges]
    rows = np.repeat(np.arange(dofmap.n_e), 2)
    cols = dofmap.vertex_index[edges].ravel()
    vals = np.tile([-1.0, 1.0], dofmap.n_e)
    keep = cols >= 0
    return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                         shape=(dofmap.n_e, dofmap.n_v)).tocsr()


def edge_line_integrals(mesh, field):
    """∫_e field · t ds for every mesh edge, oriented low -> high.

    ``field(x, y)`` takes coordinate arrays and returns (fx, fy).
    """
    edges = mesh.edge_table.edges
    pa, pb = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    d = pb - pa
    total = np.zeros(len(edges), dtype=complex)
    for t, w in zip(_GL_T, _GL_W):
        p = pa + t * d
        fx, fy = field(p[:, 0], p[:, 1])
        total += w * (np.asarray(fx) * d[:, 0] + np.asarray(fy) * d[:, 1])
    return total if np.any(total.imag) else total.real


def interpolate_hcurl(mesh, dofmap, field):
    """Edge-element interpolant over free edges (PEC edges are dropped)."""
    return edge_line_integrals(mesh, field)[dofmap.free_edges]


def interpolate_h1(mesh, dofmap, func):
    """Nodal P1 interpolant over free vertices."""
    x, y = mesh.nodes[dofmap.free_vertices].T
    return np.asarray(func(x, y)) * np.ones(dofmap.n_v)


def eval_edge_field(mesh, dofmap, u, bary):
    """Evaluate an edge-element field at barycentric points of every triangle.

    Returns (values (M, Q, 2), curl (M,)).
    """
    full = dofmap.expand_edges(np.asarray(u))
    _, grad = triangle_geometry(mesh.nodes[mesh.triangles])
    phi, curls = edge_basis(grad, bary)
    coef = full[mesh.edge_table.tri_edges] * mesh.edge_table.tri_signs
    values = np.einsum("mk,mqkd->mqd", coef, phi)
    curl = np.einsum("mk,mk->m", coef, curls)
    return values, curl


def eval_vertex_field(mesh, dofmap, p, bary):
    """Evaluate a P1 field at barycentric points of every triangle, (M, Q)."""
    full = dofmap.expand_vertices(np.asarray(p))
    return full[mesh.triangles] @ np.asarray(bary, dtype=float).reshape(-1, 3).T
