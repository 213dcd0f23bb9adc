"""Modal Dirichlet-to-Neumann matrix on the cross-section.

With normalized modes u_j, w_j = (C - ω²Me) u_j and Gram blocks G_K over
clusters of modes whose β² are conjugate to each other, the DtN matrix is

    N = Σ_K W_K diag(s·i/β_k) G_K⁻¹ W_Kᴴ,

so that N u_j = s·iβ_j⁻¹ w_j for isolated modes.  The sign ``s`` follows
from the outgoing-energy test in :func:`energy_sign`: every propagating
mode must carry power out of the interior domain (time factor e^{-iωt},
interior at z < 0) and every evanescent mode must give a positive Robin
coefficient relative to its own form.  That test selects s = +1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fem
from .errors import DegenerateClusterError, FormatError, ValidationError
from .mesh import mesh_fingerprint
from .modes import EVANESCENT, PROPAGATING, detect_clusters

log = logging.getLogger(__name__)

MAGIC = "WGDTN1"
UNITS = "c=1 lengths-dimensionless omega-rad-per-length eps-mu-relative"


@dataclass
class DtnMatrix:
    """Dense DtN matrix over free edge dofs, with its factored form.

    ``W`` holds w_j of the contributing modes as columns, ``coef`` the
    factors s·i/β_j and ``clusters`` the (member positions in W, Gram
    matrix) pairs, so that ``N = Σ W_K diag(coef_K) G_K⁻¹ W_Kᴴ``.
    """

    N: np.ndarray
    omega: float
    betas: np.ndarray
    classifications: list
    sign: int
    fingerprint: str
    W: np.ndarray
    coef: np.ndarray
    clusters: list
    params: dict = field(default_factory=dict)
    excluded: tuple = ()

    @property
    def n_e(self):
        return self.N.shape[0]

    @property
    def n_modes(self):
        return len(self.betas)

    def __eq__(self, other):
        if not isinstance(other, DtnMatrix):
            return NotImplemented
        return (serialize_dtn(self) == serialize_dtn(other))


def expansion_coeffs(blocks, omega, modeset, clusters, trace):
    """Modal coefficients a_j of an edge trace.

    Singletons: a_j = a_orth(trace, u_j) / a_orth(u_j, u_j); clusters solve
    G_K a_K = m_K with m_k = a_orth(trace, u_k).
    """
    trace = np.asarray(trace)
    if trace.shape != (blocks.n_e,):
        raise ValidationError(f"trace has shape {trace.shape}, expected ({blocks.n_e},)")
    bad = [i for c in clusters if c.degenerate for i in c.members]
    if bad:
        raise DegenerateClusterError(f"degenerate cluster(s) with modes {bad}", bad)
    St = fem.transverse_operator(blocks, omega) @ trace
    a = np.zeros(len(modeset), dtype=complex)
    for c in clusters:
        idx = list(c.members)
        m = np.array([np.vdot(modeset[k].u, St) for k in idx])
        a[idx] = np.linalg.solve(c.gram, m)
    return a


def _contributions(blocks, omega, modeset, clusters, sign):
    S = fem.transverse_operator(blocks, omega)
    used, parts, excluded = [], [], []
    for c in clusters:
        if c.degenerate:
            excluded.extend(c.members)
            continue
        idx = list(c.members)
        Wk = S @ np.column_stack([modeset[k].u for k in idx])
        ck = np.array([sign * 1j / modeset[k].beta for k in idx])
        parts.append((len(used), Wk, ck, c.gram))
        used.extend(idx)
    return used, parts, excluded


def _assemble(n_e, parts):
    N = np.zeros((n_e, n_e), dtype=complex)
    for _, Wk, ck, G in parts:
        N += (Wk * ck) @ np.linalg.solve(G, Wk.conj().T)
    return N


def energy_sign(modeset, clusters=None):
    """Sign s of the ±iβ⁻¹ factor making the boundary term outgoing / dissipative.

    For a normalized mode u_jᴴ N u_j = a_orth(u_j, u_j)·s·i/β_j, so with the
    mode's own form divided out the test reads: Im(s·i/β_j) > 0 for
    propagating modes (power leaves the interior) and s·i/β_j > 0 for
    evanescent ones (β_j = i|β_j|).  Both hold exactly for s = +1, which
    is what the outgoing derivation produces; the per-mode quantities are
    returned so callers can audit them.
    """
    votes = []
    for m in modeset:
        if m.norm_state != "normalized":
            continue
        c = 1j / m.beta
        if m.classification == PROPAGATING:
            votes.append(np.sign(c.imag))
        elif m.classification == EVANESCENT:
            votes.append(np.sign(c.real))
    if not votes:
        return 1, []
    s = 1 if sum(votes) >= 0 else -1
    return s, votes


def build_dtn(blocks, omega, modeset, clusters=None, sign=None, params=None):
    """Assemble the DtN matrix from normalized modes.

    Parameters
    ----------
    sign : None (pick by the energy test), +1 or -1.  +1 gives N u_j = iβ_j⁻¹ w_j;
        -1 reproduces the opposite convention N u_j = -iβ_j⁻¹ w_j.

    Degenerate clusters (singular Gram matrix) are left out with a warning
    and listed in ``excluded``.
    """
    if clusters is None:
        clusters = detect_clusters(modeset)
    for m in modeset:
        if m.beta == 0:
            raise ValidationError("a mode with beta = 0 cannot enter the DtN map")
    s_energy, votes = energy_sign(modeset)
    if sign is None:
        s = s_energy
    elif sign in (1, -1):
        s = int(sign)
        if s != s_energy:
            log.warning("DtN sign %+d overrides the energy-test sign %+d", s, s_energy)
    else:
        raise ValidationError(f"sign must be +1 or -1, got {sign!r}")

    used, parts, excluded = _contributions(blocks, omega, modeset, clusters, s)
    if excluded:
        log.warning("DtN: degenerate cluster modes %s excluded", excluded)
    N = _assemble(blocks.n_e, parts)

    real_vectors = all(np.linalg.norm(modeset[k].u.imag) <= 1e-8 * np.linalg.norm(modeset[k].u)
                       for k in used)
    asym = float(np.linalg.norm(N - N.T) / max(np.linalg.norm(N), 1e-300)) if used else 0.0
    if real_vectors and asym > 1e-10:
        log.warning("DtN matrix is not complex symmetric (relative asymmetry %.2e)", asym)

    W = np.column_stack([p[1] for p in parts]) if parts else np.zeros((blocks.n_e, 0), complex)
    coef = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, complex)
    cl = [(tuple(range(p[0], p[0] + len(p[2]))), p[3]) for p in parts]
    meta = {"energy_sign": f"{s_energy:+d}", "asymmetry": repr(asym),
            "truncation": repr(truncation_indicator(N, parts, modeset, used))}
    meta.update({k: str(v) for k, v in (params or {}).items()})
    return DtnMatrix(N, float(omega), np.array([modeset[k].beta for k in used], dtype=complex),
                     [modeset[k].classification for k in used], s,
                     mesh_fingerprint(modeset.mesh), W, coef, cl, meta, tuple(excluded))


def truncation_indicator(N, parts, modeset, used):
    """Share of the last (most evanescent) cluster in N applied to propagating traces.

    Small values mean adding further evanescent modes changes the load on
    propagating traces only at the level of this tail term.
    """
    if len(parts) < 2:
        return 0.0
    prop = [modeset[k].u for k in used if modeset[k].classification == PROPAGATING]
    if not prop:
        return 0.0
    _, Wk, ck, G = parts[-1]
    tail = (Wk * ck) @ np.linalg.solve(G, Wk.conj().T)
    return float(max(np.linalg.norm(tail @ u) / max(np.linalg.norm(N @ u), 1e-300) for u in prop))


def apply_dtn(dtn, trace):
    trace = np.asarray(trace)
    if trace.shape != (dtn.n_e,):
        raise ValidationError(f"trace has shape {trace.shape}, expected ({dtn.n_e},)")
    return dtn.N @ trace


# ----------------------------------------------------------------------------
# WGDTN1 file format

def _f(x):
    return repr(float(x))


def _c(z):
    return f"{_f(z.real)} {_f(z.imag)}"


def serialize_dtn(dtn, timestamp=None):
    """Text of the WGDTN1 file.

    Layout: header (magic, omega, n_e, modes, sign, units, fingerprint,
    optional created line, ``param`` lines), ``betas`` block
    (``re im classification``), ``matrix`` block of n_e² row-major
    ``re im`` lines, ``factor`` block (W columns-per-row, coefficients,
    clusters with Gram entries), ``end``.
    """
    out = [MAGIC,
           f"omega {_f(dtn.omega)}",
           f"n_e {dtn.n_e}",
           f"modes {dtn.n_modes}",
           f"sign {dtn.sign:+d}",
           f"units {UNITS}",
           f"fingerprint {dtn.fingerprint}"]
    if timestamp is not None:
        out.append(f"created {timestamp}")
    for k in sorted(dtn.params):
        out.append(f"param {k} {dtn.params[k]}")
    out.append("excluded " + " ".join(str(i) for i in dtn.excluded))
    out.append("betas")
    out += [f"{_c(b)} {c}" for b, c in zip(dtn.betas, dtn.classifications)]
    out.append("matrix")
    out += [_c(z) for z in dtn.N.ravel()]
    out.append(f"factor {dtn.W.shape[1]}")
    out += [_c(z) for z in dtn.W.ravel()]
    out += [_c(z) for z in dtn.coef]
    out.append(f"clusters {len(dtn.clusters)}")
    for members, G in dtn.clusters:
        out.append("cluster " + " ".join(str(i) for i in members))
        out += [_c(z) for z in np.asarray(G).ravel()]
    out.append("end")
    return "\n".join(out) + "\n"


def export_dtn(dtn, path, timestamp=None):
    Path(path).write_text(serialize_dtn(dtn, timestamp))


class _Reader:
    def __init__(self, text):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.lines):
            raise FormatError(f"unexpected end of file, expected {what}", self.pos + 1)
        self.pos += 1
        return self.lines[self.pos - 1]

    def keyed(self, key):
        line = self.next(key)
        head, _, rest = line.partition(" ")
        if head != key:
            raise FormatError(f"expected '{key}', got {line[:40]!r}", self.pos)
        return rest

    def number(self, key, conv):
        rest = self.keyed(key)
        try:
            return conv(rest)
        except ValueError:
            raise FormatError(f"bad value for {key}: {rest!r}", self.pos) from None

    def complexes(self, n, what):
        out = np.empty(n, dtype=complex)
        for i in range(n):
            parts = self.next(what).split()
            if len(parts) < 2:
                raise FormatError(f"expected 're im' in {what}", self.pos)
            try:
                out[i] = complex(float(parts[0]), float(parts[1]))
            except ValueError:
                raise FormatError(f"bad number in {what}", self.pos) from None
        return out


def parse_dtn(text, mesh=None):
    """Parse WGDTN1 text; with ``mesh`` the stored fingerprint must match it."""
    r = _Reader(text)
    magic = r.next("magic")
    if magic != MAGIC:
        if magic.startswith("WGDTN"):
            raise FormatError(f"unsupported DtN file version {magic!r} (expected {MAGIC})", 1)
        raise FormatError(f"not a DtN file (magic {magic[:20]!r})", 1)
    omega = r.number("omega", float)
    n_e = r.number("n_e", int)
    n_modes = r.number("modes", int)
    sign = r.number("sign", int)
    r.keyed("units")
    fingerprint = r.keyed("fingerprint")
    params = {}
    line = r.next("header")
    if line.startswith("created "):
        line = r.next("header")
    while line.startswith("param "):
        _, key, value = (line.split(" ", 2) + [""])[:3]
        params[key] = value
        line = r.next("header")
    if not line.startswith("excluded"):
        raise FormatError("expected 'excluded'", r.pos)
    try:
        excluded = tuple(int(t) for t in line.split()[1:])
    except ValueError:
        raise FormatError("bad excluded list", r.pos) from None
    if r.next("betas") != "betas":
        raise FormatError("expected 'betas'", r.pos)
    betas, kinds = [], []
    for _ in range(n_modes):
        parts = r.next("beta").split()
        if len(parts) != 3:
            raise FormatError("expected 're im classification'", r.pos)
        try:
            betas.append(complex(float(parts[0]), float(parts[1])))
        except ValueError:
            raise FormatError("bad number in betas", r.pos) from None
        kinds.append(parts[2])
    if r.next("matrix") != "matrix":
        raise FormatError("expected 'matrix'", r.pos)
    N = r.complexes(n_e * n_e, "matrix").reshape(n_e, n_e)
    k = r.number("factor", int)
    W = r.complexes(n_e * k, "factor").reshape(n_e, k)
    coef = r.complexes(k, "coefficients")
    nc = r.number("clusters", int)
    clusters = []
    for _ in range(nc):
        try:
            members = tuple(int(t) for t in r.keyed("cluster").split())
        except ValueError:
            raise FormatError("bad cluster member list", r.pos) from None
        G = r.complexes(len(members) ** 2, "gram").reshape(len(members), len(members))
        clusters.append((members, G))
    if r.next("end") != "end":
        raise FormatError("expected 'end'", r.pos)
    if r.pos != len(r.lines):
        raise FormatError("trailing content after 'end'", r.pos + 1)
    if mesh is not None and mesh_fingerprint(mesh) != fingerprint:
        raise FormatError("DtN file was built on a different mesh (fingerprint mismatch)")
    return DtnMatrix(N, omega, np.array(betas, dtype=complex), kinds, sign, fingerprint,
                     W, coef, clusters, params, excluded)


def import_dtn(path, mesh=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read DtN file {path}: {exc.strerror}") from None
    return parse_dtn(text, mesh)
