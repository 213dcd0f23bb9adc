import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st

from meshes import crack_mesh
from oracles import brute_force_blocks, restrict
from wgmodes import fem
from wgmodes.eigen import dense_oracle_eigs, shift_invert_arnoldi
from wgmodes.errors import MaterialError, ValidationError
from wgmodes.materials import MaterialMap
from wgmodes.mesh import Mesh, generate_rect_mesh, refine_uniform

GOLDEN = Path(__file__).parent / "golden" / "reference_triangle.txt"
REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def load_golden():
    blocks, name = {}, None
    for line in GOLDEN.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        if line.startswith("block "):
            name = line.split()[1]
            blocks[name] = []
        else:
            blocks[name].append([float(Fraction(t)) for t in line.split()])
    return {k: np.array(v) for k, v in blocks.items()}


def setup(mesh, eps=1.0, mu=1.0):
    dm = fem.build_dofmap(mesh)
    return dm, fem.assemble_blocks(mesh, dm, MaterialMap.uniform(mesh, eps, mu))


# ---------------------------------------------------------------- local matrices

@pytest.mark.parametrize("name", fem.BLOCK_NAMES)
def test_reference_triangle_matches_symbolic_golden(name):
    golden = load_golden()
    local = fem.local_element_matrices(REF)
    np.testing.assert_allclose(getattr(local, name), golden[name], rtol=0, atol=1e-15)


def test_reference_curl_curl_is_rank_one():
    area, grad = fem.triangle_geometry(REF)
    _, curls = fem.edge_basis(grad, fem.QUAD_BARY)
    s = curls[0]
    np.testing.assert_allclose(fem.local_element_matrices(REF).C, np.outer(s, s) * area[0])


def test_reference_stiffness_is_classical_p1():
    K = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    np.testing.assert_allclose(fem.local_element_matrices(REF).Kv, K, atol=1e-15)


def test_quadrature_rule_exact_to_degree_five():
    pts, w = fem.QUAD_BARY[:, 1:], fem.QUAD_WEIGHTS * 0.5
    for i in range(6):
        for j in range(6 - i):
            exact = math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
            assert np.sum(w * pts[:, 0] ** i * pts[:, 1] ** j) == pytest.approx(exact, abs=1e-15)


def test_edge_basis_unit_tangential_moment():
    # ∫ φ_ab · t ds along its own edge is 1, along the other two edges 0
    area, grad = fem.triangle_geometry(REF)
    t = np.linspace(0, 1, 2001)
    for k, (a, b) in enumerate(fem.LOCAL_EDGES):
        for kk, (c, d) in enumerate(fem.LOCAL_EDGES):
            bary = np.zeros((len(t), 3))
            bary[:, c], bary[:, d] = 1 - t, t
            vals, _ = fem.edge_basis(grad, bary)
            tang = REF[d] - REF[c]
            integrand = vals[0, :, k, :] @ tang
            assert np.trapezoid(integrand, t) == pytest.approx(float(k == kk), abs=1e-12)


triangles = st.lists(st.floats(-2, 2, allow_nan=False), min_size=6, max_size=6).map(
    lambda v: np.array(v).reshape(3, 2)).filter(
    lambda P: 0.5 * ((P[1, 0] - P[0, 0]) * (P[2, 1] - P[0, 1]) - (P[2, 0] - P[0, 0]) * (P[1, 1] - P[0, 1])) > 1e-2)


@given(triangles, st.floats(0.2, 5))
def test_property_linearity_in_eps(P, factor):
    a = fem.local_element_matrices(P, 1.0, 1.0)
    b = fem.local_element_matrices(P, factor, 1.0)
    for name in ("Me", "Mv", "D"):
        np.testing.assert_allclose(getattr(b, name), factor * getattr(a, name), rtol=1e-13, atol=1e-14)
    for name in ("C", "Kv", "G", "Gdiv", "Mmu"):
        assert np.array_equal(getattr(b, name), getattr(a, name))


@given(triangles)
def test_property_doubling_inverse_mu(P):
    a = fem.local_element_matrices(P, 1.0, 1.0)
    b = fem.local_element_matrices(P, 1.0, 0.5)
    for name in ("C", "Mmu", "G", "Gdiv", "Kv"):
        np.testing.assert_allclose(getattr(b, name), 2 * getattr(a, name), rtol=1e-14, atol=1e-14)
    for name in ("Me", "Mv", "D"):
        assert np.array_equal(getattr(b, name), getattr(a, name))


@given(triangles)
def test_property_local_blocks_symmetry_and_definiteness(P):
    loc = fem.local_element_matrices(P)
    for name in fem.SYMMETRIC_BLOCKS:
        M = getattr(loc, name)
        assert np.array_equal(M, M.T)
    assert np.all(la.eigvalsh(loc.Me) > 0) and np.all(la.eigvalsh(loc.Mv) > 0)
    scale = np.abs(loc.C).max()
    assert np.all(la.eigvalsh(loc.C) > -1e-12 * scale)


def test_degenerate_triangle_rejected():
    with pytest.raises(ValidationError):
        fem.local_element_matrices(np.array([[0, 0], [1, 0], [2, 0]]))
    with pytest.raises(ValidationError):
        fem.local_element_matrices(REF, eps_at_quad=-1.0)


# ---------------------------------------------------------------- dof map

def test_dofmap_reference_triangle_fully_clamped():
    m = Mesh(REF, [[0, 1, 2]], ["1"], [[0, 1], [1, 2], [2, 0]], ["pec"] * 3)
    dm, blocks = setup(m)
    assert (dm.n_e, dm.n_v) == (0, 0)
    assert blocks.C.shape == (0, 0) and blocks.G.shape == (0, 0)


def test_dofmap_rectangle_counts():
    m = generate_rect_mesh(1, 0.5, 4, 2)
    dm = fem.build_dofmap(m)
    assert dm.n_e == m.n_edges - len(m.boundary_edges) == 18
    assert dm.n_v == 3
    assert dm.size == 21
    assert np.all(dm.edge_index[dm.free_edges] == np.arange(dm.n_e))


def test_dofmap_slit_is_eliminated():
    m, slit = crack_mesh()
    dm = fem.build_dofmap(m)
    for a, b in [(slit[0], slit[1]), (slit[1], slit[2]), (slit[0], slit[3]), (slit[3], slit[2])]:
        assert m.edge_table.find(a, b) not in dm.free_edges
    assert not set(slit) & set(dm.free_vertices.tolist())


def test_dofmap_requires_enclosing_pec():
    m = generate_rect_mesh(1, 0.5, 2, 1, tag="port")
    with pytest.raises(ValidationError, match="not PEC"):
        fem.build_dofmap(m)
    with pytest.raises(ValidationError):
        fem.build_dofmap(generate_rect_mesh(1, 0.5, 2, 1), pec_tags=())


def test_missing_material_region():
    m = generate_rect_mesh(1, 0.5, 2, 1)
    with pytest.raises(MaterialError):
        fem.assemble_blocks(m, fem.build_dofmap(m), MaterialMap({"other": (1, 1)}))


# ---------------------------------------------------------------- global blocks

def _jittered_two_region_mesh():
    base = generate_rect_mesh(1.0, 0.5, 4, 2)
    rng = np.random.default_rng(7)
    nodes = base.nodes.copy()
    inner = (nodes[:, 0] > 0) & (nodes[:, 0] < 1) & (nodes[:, 1] > 0) & (nodes[:, 1] < 0.5)
    nodes[inner] += rng.uniform(-0.04, 0.04, (inner.sum(), 2))
    regions = ["core" if c[0] < 0.5 else "clad" for c in base.nodes[base.triangles].mean(axis=1)]
    return Mesh(nodes, base.triangles, regions, base.boundary_edges, base.boundary_tags)


def test_blocks_match_brute_force_quadrature():
    mesh = _jittered_two_region_mesh()
    eps_field = {i: 1.0 + 0.5 * x + 0.25 * y for i, (x, y) in enumerate(mesh.nodes)}
    mats = MaterialMap({"core": (eps_field, 2.0), "clad": (eps_field, 1.0)})
    dm = fem.build_dofmap(mesh)
    blocks = fem.assemble_blocks(mesh, dm, mats)

    def mu_fn(X):
        # constant per triangle; the oracle integrates one triangle at a time
        return mu_fn.value * np.ones(len(X))

    eps_fn = lambda X: 1.0 + 0.5 * X[:, 0] + 0.25 * X[:, 1]  # noqa: E731
    totals = None
    for region, mu in (("core", 2.0), ("clad", 1.0)):
        sel = [t for t, r in enumerate(mesh.regions) if r == region]
        sub = Mesh(mesh.nodes, mesh.triangles[sel], [region] * len(sel))
        mu_fn.value = mu
        part, edges = brute_force_blocks(sub, eps_fn, mu_fn)
        full = {e: i for i, e in enumerate(sorted({tuple(sorted((int(t[a]), int(t[b]))))
                                                    for t in mesh.triangles
                                                    for a, b in ((0, 1), (1, 2), (2, 0))}))}
        idx = np.array([full[e] for e in edges])
        ne, nn = len(full), mesh.n_nodes
        if totals is None:
            totals = {k: np.zeros(s) for k, s in [("C", (ne, ne)), ("Me", (ne, ne)),
                                                  ("Mmu", (ne, ne)), ("G", (ne, nn)),
                                                  ("D", (nn, ne)), ("Gdiv", (nn, ne)),
                                                  ("Mv", (nn, nn)), ("Kv", (nn, nn))]}
        for k, v in part.items():
            if k in ("C", "Me", "Mmu"):
                totals[k][np.ix_(idx, idx)] += v
            elif k == "G":
                totals[k][idx, :] += v
            elif k in ("D", "Gdiv"):
                totals[k][:, idx] += v
            else:
                totals[k] += v
    ref = restrict(totals, sorted(full), mesh)
    for name in fem.BLOCK_NAMES:
        got = getattr(blocks, name).toarray()
        want = ref[name]
        scale = np.abs(want).max()
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12 * scale, err_msg=name)


def test_global_block_structure():
    mesh = generate_rect_mesh(1, 0.5, 8, 4)
    dm, b = setup(mesh, eps=2.0, mu=1.5)
    for name in fem.SYMMETRIC_BLOCKS:
        M = getattr(b, name)
        assert (M - M.T).nnz == 0 or abs(M - M.T).max() == 0
    for name in ("Me", "Mmu", "Mv"):
        assert la.eigvalsh(getattr(b, name).toarray()).min() > 0
    for name in ("C", "Kv"):
        ev = la.eigvalsh(getattr(b, name).toarray())
        assert ev.min() > -1e-12 * ev.max()
    assert abs(b.Gdiv - b.G.T).max() == 0


def test_discrete_exact_sequence_identities():
    mesh = _jittered_two_region_mesh()
    mats = MaterialMap({"core": (2.0, 1.5), "clad": (1.0, 1.0)})
    dm = fem.build_dofmap(mesh)
    b = fem.assemble_blocks(mesh, dm, mats)
    Grad = fem.gradient_matrix(mesh, dm)
    tol = 1e-12
    assert abs(b.C @ Grad).max() < tol * abs(b.C).max()
    assert abs(b.G - b.Mmu @ Grad).max() < tol * abs(b.G).max()
    assert abs(b.Kv - Grad.T @ b.Mmu @ Grad).max() < tol * abs(b.Kv).max()
    assert abs(b.D + Grad.T @ b.Me).max() < tol * abs(b.D).max()


def test_kv_hat_sum_against_quadrature():
    mesh = _jittered_two_region_mesh()
    dm, b = setup(mesh, mu=2.0)
    one = np.ones(dm.n_v)
    # ∫ μ⁻¹ |∇ Σψ|² with an 8x8 Duffy rule on every triangle
    full, _ = brute_force_blocks(mesh, mu_fn=lambda X: 2.0 * np.ones(len(X)))
    hat = np.zeros(mesh.n_nodes)
    hat[dm.free_vertices] = 1
    assert one @ b.Kv @ one == pytest.approx(hat @ full["Kv"] @ hat, rel=1e-13)


def test_divergence_row_on_gradient_interpolants():
    # D Π(∇f) ≈ -Kv f for f vanishing on the walls; error shrinks with h
    f = lambda x, y: np.sin(np.pi * x) * np.sin(2 * np.pi * y)  # noqa: E731
    grad_f = lambda x, y: (np.pi * np.cos(np.pi * x) * np.sin(2 * np.pi * y),  # noqa: E731
                           2 * np.pi * np.sin(np.pi * x) * np.cos(2 * np.pi * y))
    errs = []
    for n in (4, 8, 16):
        mesh = generate_rect_mesh(1, 0.5, n, n // 2)
        dm, b = setup(mesh)
        lhs = b.D @ fem.interpolate_hcurl(mesh, dm, grad_f)
        rhs = -(b.Kv @ fem.interpolate_h1(mesh, dm, f))
        errs.append(np.abs(lhs - rhs).max() / np.abs(rhs).max())
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-4


# ---------------------------------------------------------------- interpolation

def test_interpolate_constant_field_on_edge():
    m = Mesh(REF, [[0, 1, 2]], ["1"])
    vals = fem.edge_line_integrals(m, lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    assert vals[m.edge_table.find(0, 1)] == pytest.approx(1.0)
    assert vals[m.edge_table.find(0, 2)] == pytest.approx(0.0)
    assert vals[m.edge_table.find(1, 2)] == pytest.approx(-1.0)


@given(triangles)
def test_property_gradient_circulation_vanishes(P):
    m = Mesh(P, [[0, 1, 2]], ["1"])
    vals = fem.edge_line_integrals(m, lambda x, y: (y, x))      # ∇(xy)
    t = m.edge_table
    assert abs(np.sum(vals[t.tri_edges[0]] * t.tri_signs[0])) < 1e-12


def test_te10_interpolant_converges_in_curl_norm():
    Et = lambda x, y: (0 * x, np.sin(np.pi * x))  # noqa: E731
    curl = lambda x, y: np.pi * np.cos(np.pi * x)  # noqa: E731
    errs = []
    for n in (8, 16, 32):
        mesh = generate_rect_mesh(1, 0.5, n, n // 2)
        dm = fem.build_dofmap(mesh)
        u = fem.interpolate_hcurl(mesh, dm, Et)
        vals, c = fem.eval_edge_field(mesh, dm, u, fem.QUAD_BARY)
        X = np.einsum("qk,mkd->mqd", fem.QUAD_BARY, mesh.nodes[mesh.triangles])
        ex, ey = Et(X[..., 0], X[..., 1])
        w = fem.QUAD_WEIGHTS[None, :] * mesh.areas[:, None]
        e2 = np.sum(w * ((vals[..., 0] - ex) ** 2 + (vals[..., 1] - ey) ** 2
                         + (c[:, None] - curl(X[..., 0], X[..., 1])) ** 2))
        errs.append(np.sqrt(e2))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 0.95)


# ---------------------------------------------------------------- forms and pencils

def test_a_orth_hermitian(rng):
    mesh = generate_rect_mesh(1, 0.5, 4, 2)
    dm, b = setup(mesh)
    x = rng.standard_normal(dm.n_e)
    assert np.imag(fem.a_orth(b, 6.5, x, x)) == 0
    xc = x + 1j * rng.standard_normal(dm.n_e)
    y = rng.standard_normal(dm.n_e) + 1j * rng.standard_normal(dm.n_e)
    assert fem.a_orth(b, 6.5, xc, y) == pytest.approx(np.conj(fem.a_orth(b, 6.5, y, xc)), rel=1e-13)
    assert fem.a_orth(b, 6.5, xc, 2j * y) == pytest.approx(-2j * fem.a_orth(b, 6.5, xc, y), rel=1e-13)


def test_scalar_helmholtz_limits():
    mesh = generate_rect_mesh(1, 1, 4, 4)
    dm, b = setup(mesh)
    H0 = fem.scalar_helmholtz(b, 0.0)
    assert abs(H0 - b.Kv).max() == 0
    assert la.eigvalsh(H0.toarray()).min() > 0


def test_first_dirichlet_eigenvalue_unit_square():
    errs = []
    for n in (4, 8, 16):
        mesh = generate_rect_mesh(1, 1, n, n)
        dm, b = setup(mesh)
        lam = la.eigh(b.Kv.toarray(), b.Mv.toarray(), eigvals_only=True)[0]
        errs.append(abs(lam - 2 * np.pi ** 2))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_helmholtz_singular_at_discrete_eigenvalue():
    mesh = generate_rect_mesh(1, 1, 4, 4)
    dm, b = setup(mesh)
    lam = la.eigh(b.Kv.toarray(), b.Mv.toarray(), eigvals_only=True)[0]
    s = la.svdvals(fem.scalar_helmholtz(b, np.sqrt(lam)).toarray())
    assert s.min() < 1e-12 * s.max()


def test_pencil_structure():
    mesh = generate_rect_mesh(1, 0.5, 4, 2)
    dm, b = setup(mesh)
    A1, B1 = fem.pencil_vd1(b, 6.5)
    assert np.linalg.matrix_rank(B1.toarray()) == dm.n_e
    p = np.ones(dm.n_v)
    x = np.concatenate([np.zeros(dm.n_e), p])
    assert np.linalg.norm((A1 @ x)[dm.n_e:]) > 0
    assert np.linalg.norm(B1 @ x) == 0
    A2, B2 = fem.pencil_vd2(b, 6.5)
    assert np.allclose((A2 @ x)[dm.n_e:], (-b.Kv + 6.5 ** 2 * b.Mv) @ p)


@pytest.mark.parametrize("n", [4, 8])
def test_vd1_vd2_same_spectrum_and_vectors(n):
    mesh = generate_rect_mesh(1, 0.5, n, n // 2)
    dm, b = setup(mesh)
    l1, X1 = dense_oracle_eigs(*fem.pencil_vd1(b, 6.5), 42.25, return_vectors=True)
    l2, X2 = dense_oracle_eigs(*fem.pencil_vd2(b, 6.5), 42.25, return_vectors=True)
    nz1, nz2 = np.abs(l1) > 1e-8, np.abs(l2) > 1e-8
    a, c = np.sort_complex(l1[nz1]), np.sort_complex(l2[nz2])
    assert len(a) == len(c) == dm.n_e
    assert np.max(np.abs(a - c) / np.maximum(np.abs(a), 1)) < 1e-6
    # eigenvector edge parts agree for simple eigenvalues
    for i in np.flatnonzero(nz1)[:6]:
        gaps = np.abs(l1 - l1[i])
        if np.sort(gaps)[1] < 1e-6 * abs(l1[i]):
            continue
        j = int(np.argmin(np.abs(l2 - l1[i])))
        u1, u2 = X1[:dm.n_e, i], X2[:dm.n_e, j]
        cosang = abs(np.vdot(u1, u2)) / (np.linalg.norm(u1) * np.linalg.norm(u2))
        assert np.arccos(min(cosang, 1.0)) < 1e-6


def test_realness_of_blocks():
    mesh = generate_rect_mesh(1, 0.5, 4, 2)
    _, b = setup(mesh, eps=2.0)
    A1, B1 = fem.pencil_vd1(b, 3.0)
    assert A1.dtype.kind == "f" and B1.dtype.kind == "f"


def test_refined_mesh_assembles():
    m = refine_uniform(generate_rect_mesh(1, 0.5, 2, 1))
    dm, b = setup(m)
    lam = shift_invert_arnoldi(*fem.pencil_vd1(b, 6.5), 42.25, nev=2)
    assert lam[0].lam.real == pytest.approx(42.25 - np.pi ** 2, rel=0.05)
