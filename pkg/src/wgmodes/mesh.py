"""Triangle meshes of the guide cross-section.

Nodes are 2D points, triangles are counterclockwise node triples carrying a
region tag, and ``boundary_edges`` lists tagged node pairs (PEC walls, thin
PEC strips, or user tags).  The edge table is derived on construction and
gives every geometric edge a global index and a low-to-high orientation.

File format (sections in this order, ``#`` starts a comment)::

    $nodes
    <N>
    <id> <x> <y>
    $triangles
    <M>
    <id> <v1> <v2> <v3> <region_tag>
    $boundary_edges
    <K>
    <id> <v1> <v2> <tag>
    $end
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MeshError

PEC = "pec"

# local edge k of a triangle joins local vertices LOCAL_EDGES[k]
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True, eq=False)
class EdgeTable:
    """Global edges, sorted by (min node, max node).

    ``tri_edges[t, k]`` is the global index of local edge ``k`` of triangle
    ``t``; ``tri_signs[t, k]`` is +1 when the local direction agrees with the
    global low-to-high orientation, -1 otherwise.
    """

    edges: np.ndarray
    tri_edges: np.ndarray
    tri_signs: np.ndarray
    incidence: np.ndarray

    @property
    def n_edges(self):
        return len(self.edges)

    def find(self, v1, v2):
        """Global index of edge {v1, v2}, or -1."""
        lo, hi = (v1, v2) if v1 < v2 else (v2, v1)
        i = np.searchsorted(self.edges[:, 0], lo, side="left")
        j = np.searchsorted(self.edges[:, 0], lo, side="right")
        k = i + np.searchsorted(self.edges[i:j, 1], hi)
        if k < j and self.edges[k, 1] == hi:
            return int(k)
        return -1


def signed_areas(nodes, triangles):
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def build_edge_table(triangles):
    """Enumerate the edges of a triangle list deterministically."""
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    a = triangles[:, [i for i, _ in LOCAL_EDGES]]
    b = triangles[:, [j for _, j in LOCAL_EDGES]]
    lo = np.minimum(a, b).ravel()
    hi = np.maximum(a, b).ravel()
    pairs = np.stack([lo, hi], axis=1)
    if len(pairs):
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    else:
        edges, inverse = np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    inverse = inverse.reshape(-1)
    incidence = np.bincount(inverse, minlength=len(edges))
    tri_edges = inverse.reshape(-1, 3)
    tri_signs = np.where(a < b, 1, -1).astype(np.int8)
    return EdgeTable(edges.astype(np.int64), tri_edges, tri_signs, incidence)


class Mesh:
    """Validated, immutable triangle mesh.

    Parameters
    ----------
    nodes : (N, 2) array of coordinates
    triangles : (M, 3) array of node indices, counterclockwise
    regions : sequence of M region tags (strings)
    boundary_edges : (K, 2) array of node index pairs
    boundary_tags : sequence of K tags, ``"pec"`` for perfect conductors
    """

    def __init__(self, nodes, triangles, regions, boundary_edges=(), boundary_tags=()):
        nodes = np.array(nodes, dtype=np.float64).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        boundary_edges = np.array(boundary_edges, dtype=np.int64).reshape(-1, 2)
        regions = tuple(str(r) for r in regions)
        boundary_tags = tuple(str(t) for t in boundary_tags)
        if len(regions) != len(triangles):
            raise MeshError("one region tag per triangle required")
        if len(boundary_tags) != len(boundary_edges):
            raise MeshError("one tag per boundary edge required")

        n = len(nodes)
        for t, tri in enumerate(triangles):
            _check_triangle(tri, n, t)
        areas = signed_areas(nodes, triangles)
        bad = np.flatnonzero(~(areas > 0))
        if len(bad):
            raise MeshError(f"triangle {bad[0]}: non-positive area {areas[bad[0]]:.3e}")

        table = build_edge_table(triangles)
        if np.any(table.incidence > 2):
            e = int(np.flatnonzero(table.incidence > 2)[0])
            raise MeshError(f"edge {tuple(table.edges[e])} shared by more than two triangles")
        _check_orientation(table)

        ids = np.empty(len(boundary_edges), dtype=np.int64)
        for k, (v1, v2) in enumerate(boundary_edges):
            ids[k] = _match_boundary_edge(table, v1, v2, n, k)
        if len(np.unique(ids)) != len(ids):
            raise MeshError("boundary edge listed twice")

        self.nodes = _frozen(nodes)
        self.triangles = _frozen(triangles)
        self.regions = regions
        self.boundary_edges = _frozen(boundary_edges)
        self.boundary_tags = boundary_tags
        self.edge_table = table
        self.boundary_edge_ids = _frozen(ids)
        self.areas = _frozen(areas)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return self.edge_table.n_edges

    def region_tags(self):
        return sorted(set(self.regions))

    def outer_edge_ids(self):
        """Edges with a single incident triangle (outer boundary and slit sides)."""
        return np.flatnonzero(self.edge_table.incidence == 1)

    def tagged_edge_ids(self, tags):
        tags = set(tags)
        return np.array(sorted(int(e) for e, t in zip(self.boundary_edge_ids, self.boundary_tags)
                               if t in tags), dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.triangles, other.triangles)
                and self.regions == other.regions
                and np.array_equal(self.boundary_edges, other.boundary_edges)
                and self.boundary_tags == other.boundary_tags)

    __hash__ = None

    def __repr__(self):
        return (f"Mesh(nodes={self.n_nodes}, triangles={self.n_triangles}, "
                f"edges={self.n_edges}, boundary_edges={len(self.boundary_edges)})")


def _frozen(a):
    a.setflags(write=False)
    return a


def _check_triangle(tri, n, t, line=None):
    for v in tri:
        if v < 0 or v >= n:
            raise MeshError(f"triangle {t}: dangling node index {v}", line)
    if len(set(int(v) for v in tri)) != 3:
        raise MeshError(f"triangle {t}: repeated node", line)


def _check_orientation(table):
    # two triangles sharing an edge must traverse it in opposite directions
    shared = np.flatnonzero(table.incidence == 2)
    if not len(shared):
        return
    total = np.zeros(table.n_edges, dtype=np.int64)
    np.add.at(total, table.tri_edges.ravel(), table.tri_signs.ravel().astype(np.int64))
    bad = shared[total[shared] != 0]
    if len(bad):
        raise MeshError(f"edge {tuple(table.edges[bad[0]])}: inconsistent orientation "
                        "(overlapping triangles)")


def _match_boundary_edge(table, v1, v2, n, k, line=None):
    if not (0 <= v1 < n and 0 <= v2 < n):
        raise MeshError(f"boundary edge {k}: dangling node index", line)
    e = table.find(int(v1), int(v2))
    if e < 0:
        raise MeshError(f"boundary edge {k} ({v1}, {v2}) matches no triangle edge", line)
    return e


def generate_rect_mesh(a, b, nx, ny, region="1", tag=PEC):
    """Structured mesh of [0, a] x [0, b] with alternating cell diagonals.

    Cell (i, j) is split along its rising diagonal when i + j is even and
    along the falling one otherwise.  With even ``nx`` and ``ny`` the mesh
    inherits the mirror symmetries of the rectangle, so modes that are
    degenerate in the continuum stay degenerate to rounding.
    """
    if not (a > 0 and b > 0):
        raise ValueError("rectangle dimensions must be positive")
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be >= 1")
    nx, ny = int(nx), int(ny)
    xs = np.array([a * i / nx for i in range(nx + 1)])
    ys = np.array([b * j / ny for j in range(ny + 1)])
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    def node(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            p00, p10, p01, p11 = node(i, j), node(i + 1, j), node(i, j + 1), node(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris += [(p00, p10, p11), (p00, p11, p01)]
            else:
                tris += [(p00, p10, p01), (p10, p11, p01)]
    bnd = ([(node(i, 0), node(i + 1, 0)) for i in range(nx)]
           + [(node(nx, j), node(nx, j + 1)) for j in range(ny)]
           + [(node(i + 1, ny), node(i, ny)) for i in reversed(range(nx))]
           + [(node(0, j + 1), node(0, j)) for j in reversed(range(ny))])
    return Mesh(nodes, tris, [region] * len(tris), bnd, [tag] * len(bnd))


def refine_uniform(mesh):
    """Red refinement: split every triangle into four at edge midpoints."""
    table = mesh.edge_table
    n = mesh.n_nodes
    mid = 0.5 * (mesh.nodes[table.edges[:, 0]] + mesh.nodes[table.edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mid])
    tris = []
    regions = []
    for t, (v0, v1, v2) in enumerate(mesh.triangles):
        m01, m12, m20 = (n + table.tri_edges[t, k] for k in range(3))
        tris += [(v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m01, m12, m20)]
        regions += [mesh.regions[t]] * 4
    bnd, tags = [], []
    for (v1, v2), e, tag in zip(mesh.boundary_edges, mesh.boundary_edge_ids, mesh.boundary_tags):
        m = n + e
        bnd += [(v1, m), (m, v2)]
        tags += [tag, tag]
    return Mesh(nodes, tris, regions, bnd, tags)


def serialize_mesh(mesh):
    out = ["$nodes", str(mesh.n_nodes)]
    out += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    out += ["$triangles", str(mesh.n_triangles)]
    out += [f"{i} {v1} {v2} {v3} {r}"
            for i, ((v1, v2, v3), r) in enumerate(zip(mesh.triangles.tolist(), mesh.regions))]
    out += ["$boundary_edges", str(len(mesh.boundary_edges))]
    out += [f"{i} {v1} {v2} {t}"
            for i, ((v1, v2), t) in enumerate(zip(mesh.boundary_edges.tolist(), mesh.boundary_tags))]
    out.append("$end")
    return "\n".join(out) + "\n"


def mesh_fingerprint(mesh):
    return hashlib.sha256(serialize_mesh(mesh).encode()).hexdigest()


class _Lines:
    """Iterator over meaningful lines with 1-based line numbers."""

    def __init__(self, text):
        self._items = []
        for no, raw in enumerate(text.splitlines(), start=1):
            s = raw.split("#", 1)[0].strip()
            if s:
                self._items.append((no, s))
        self._pos = 0
        self.last = len(text.splitlines())

    def next(self, what):
        if self._pos >= len(self._items):
            raise MeshError(f"unexpected end of file, expected {what}", self.last)
        item = self._items[self._pos]
        self._pos += 1
        return item

    def done(self):
        return self._pos >= len(self._items)


def _section(lines, name):
    no, s = lines.next(f"${name}")
    if s != f"${name}":
        raise MeshError(f"expected section header ${name}, got {s!r}", no)
    no, s = lines.next(f"{name} count")
    try:
        count = int(s)
    except ValueError:
        raise MeshError(f"bad {name} count {s!r}", no) from None
    if count < 0:
        raise MeshError(f"negative {name} count", no)
    return count


def _fields(lines, what, n, index):
    no, s = lines.next(what)
    parts = s.split()
    if len(parts) != n:
        raise MeshError(f"{what}: expected {n} fields, got {len(parts)}", no)
    try:
        ident = int(parts[0])
    except ValueError:
        raise MeshError(f"{what}: bad id {parts[0]!r}", no) from None
    if ident != index:
        raise MeshError(f"{what}: id {ident} out of order (expected {index})", no)
    return no, parts[1:]


def _ints(parts, no, what):
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise MeshError(f"{what}: non-integer node index", no) from None


def parse_mesh(text):
    """Parse and validate a mesh document; errors carry line numbers."""
    lines = _Lines(text)

    n = _section(lines, "nodes")
    nodes = np.empty((n, 2))
    for i in range(n):
        no, (x, y) = _fields(lines, "node", 3, i)
        try:
            nodes[i] = float(x), float(y)
        except ValueError:
            raise MeshError("node: bad coordinate", no) from None
        if not np.all(np.isfinite(nodes[i])):
            raise MeshError("node: non-finite coordinate", no)

    m = _section(lines, "triangles")
    tris = np.empty((m, 3), dtype=np.int64)
    regions = []
    for t in range(m):
        no, parts = _fields(lines, "triangle", 5, t)
        tris[t] = _ints(parts[:3], no, "triangle")
        _check_triangle(tris[t], n, t, no)
        area = signed_areas(nodes, tris[t:t + 1])[0]
        if not area > 0:
            raise MeshError(f"triangle {t}: non-positive area {area:.3e}", no)
        regions.append(parts[3])

    table = build_edge_table(tris)
    k = _section(lines, "boundary_edges")
    bnd = np.empty((k, 2), dtype=np.int64)
    tags = []
    for i in range(k):
        no, parts = _fields(lines, "boundary edge", 4, i)
        bnd[i] = _ints(parts[:2], no, "boundary edge")
        _match_boundary_edge(table, bnd[i, 0], bnd[i, 1], n, i, no)
        tags.append(parts[2])

    no, s = lines.next("$end")
    if s != "$end":
        raise MeshError(f"expected $end, got {s!r}", no)
    if not lines.done():
        no, s = lines.next("")
        raise MeshError("content after $end", no)
    return Mesh(nodes, tris, regions, bnd, tags)


def read_mesh(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read mesh file {path}: {exc.strerror}") from None
    return parse_mesh(text)


def write_mesh(mesh, path):
    Path(path).write_text(serialize_mesh(mesh))
