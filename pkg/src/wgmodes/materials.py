"""Piecewise permittivity and permeability maps.

Material file, one region per line::

    <region_tag> <epsilon> <mu>
    <region_tag> field <epsilon_file> <mu_file>
    <region_tag> field <file>

Two-file fields hold ``<node_id> <value>`` pairs, one per line; a single
field file holds ``<node_id> <epsilon> <mu>`` triples.  Values are
interpolated linearly inside each triangle of the region.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, MaterialError


class MaterialMap:
    """Map region tag -> (epsilon, mu).

    Each value is either a positive float or a dict ``{node_id: value}``
    giving a nodal field on that region.
    """

    def __init__(self, regions):
        self.regions = {}
        for tag, (eps, mu) in regions.items():
            self.regions[str(tag)] = (_coerce(eps, tag, "epsilon"), _coerce(mu, tag, "mu"))

    @classmethod
    def uniform(cls, mesh, epsilon=1.0, mu=1.0):
        return cls({tag: (epsilon, mu) for tag in mesh.region_tags()})

    def __contains__(self, tag):
        return tag in self.regions

    def check(self, mesh):
        missing = [t for t in mesh.region_tags() if t not in self.regions]
        if missing:
            raise MaterialError(f"no material for region tag(s): {', '.join(missing)}")

    def is_constant(self):
        return all(np.isscalar(e) and np.isscalar(m) for e, m in self.regions.values())

    def evaluate(self, mesh, bary):
        """Return (eps, mu) sampled at barycentric points, shape (M, Q)."""
        self.check(mesh)
        bary = np.asarray(bary, dtype=float).reshape(-1, 3)
        eps = np.empty((mesh.n_triangles, len(bary)))
        mu = np.empty_like(eps)
        regions = np.array(mesh.regions)
        for tag, (e, m) in self.regions.items():
            sel = np.flatnonzero(regions == tag)
            if not len(sel):
                continue
            eps[sel] = _sample(e, mesh, sel, bary, tag, "epsilon")
            mu[sel] = _sample(m, mesh, sel, bary, tag, "mu")
        return eps, mu

    def max_eps_mu(self, mesh):
        """Largest epsilon * mu, sampled at vertices, edge midpoints and centroids.

        Only used to place the default shift, so sampling is good enough.
        """
        bary = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1 / 3, 1 / 3, 1 / 3],
                         [0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]])
        eps, mu = self.evaluate(mesh, bary)
        return float(np.max(eps * mu))


def _coerce(value, tag, name):
    if isinstance(value, dict):
        vals = {int(k): float(v) for k, v in value.items()}
        for k, v in vals.items():
            if not (np.isfinite(v) and v > 0):
                raise MaterialError(f"region {tag}: {name} at node {k} must be positive, got {v}")
        return vals
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise MaterialError(f"region {tag}: {name} must be positive, got {v}")
    return v


def _sample(value, mesh, sel, bary, tag, name):
    if not isinstance(value, dict):
        return np.full((len(sel), len(bary)), value)
    tris = mesh.triangles[sel]
    try:
        nodal = np.vectorize(value.__getitem__, otypes=[float])(tris)
    except KeyError as exc:
        raise MaterialError(f"region {tag}: {name} field has no value at node {exc.args[0]}") from None
    return nodal @ bary.T


def _read_field(path, line, ncols=1):
    """Per-node columns of a field file as a list of ``ncols`` dicts."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read field file {path}: {exc.strerror}", line) from None
    values = [{} for _ in range(ncols)]
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].split()
        if not s:
            continue
        if len(s) != ncols + 1:
            want = "<node_id> <value>" if ncols == 1 else "<node_id> <epsilon> <mu>"
            raise FormatError(f"{path}: line {no}: expected '{want}'")
        try:
            node = int(s[0])
            for k in range(ncols):
                values[k][node] = float(s[k + 1])
        except ValueError:
            raise FormatError(f"{path}: line {no}: bad number") from None
    return values


def parse_materials(text, base_dir="."):
    regions = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].split()
        if not s:
            continue
        if len(s) == 4 and s[1] == "field":
            (eps,) = _read_field(Path(base_dir) / s[2], no)
            (mu,) = _read_field(Path(base_dir) / s[3], no)
        elif len(s) == 3 and s[1] == "field":
            eps, mu = _read_field(Path(base_dir) / s[2], no, ncols=2)
        elif len(s) == 3:
            try:
                eps, mu = float(s[1]), float(s[2])
            except ValueError:
                raise FormatError("expected '<region> <epsilon> <mu>'", no) from None
        else:
            raise FormatError("expected '<region> <epsilon> <mu>' or "
                              "'<region> field <file> [<mu_file>]'", no)
        if s[0] in regions:
            raise FormatError(f"region {s[0]} defined twice", no)
        regions[s[0]] = (eps, mu)
    return MaterialMap(regions)


def read_materials(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read materials file {path}: {exc.strerror}") from None
    return parse_materials(text, path.parent)


def write_materials(materials, path):
    lines = []
    for tag, (e, m) in materials.regions.items():
        if isinstance(e, dict) or isinstance(m, dict):
            raise ValueError("write_materials handles constant regions only")
        lines.append(f"{tag} {e!r} {m!r}")
    Path(path).write_text("\n".join(lines) + "\n")
