"""Physical modes from Ritz pairs: branch choice, normalization, clusters, checks.

A mode carries the transverse edge coefficients ``u`` (Ê) and the vertex
coefficients ``p`` of Ẽ₃ = iβE₃.  Modes are normalized with respect to the
Hermitian form ``a_orth(x, y) = yᴴ (C - ω²Me) x``.  That form is indefinite,
so the best a positive rescaling can do is |a_orth(u, u)| = 1; the sign is
kept in ``Mode.norm_sign`` and enters the projection Gram matrices.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import splu

from . import fem
from .eigen import (DENSE_CAP, RitzPair, _norm1, cutoff_distance, dense_oracle_eigs,
                    pencil_residual, shift_invert_arnoldi)
from .errors import CutoffError, FactorizationError, SolverError, ValidationError

log = logging.getLogger(__name__)

REAL_TOL = 1e-8
CLUSTER_TOL = 1e-6
ORTH_TOL = 1e-8
DEGENERATE_TOL = 1e-10
CUTOFF_TOL = 1e-6
ZERO_TOL = 1e-8

PROPAGATING = "propagating"
EVANESCENT = "evanescent"
COMPLEX = "complex"


@dataclass
class Mode:
    """One guided mode.

    ``norm_state`` is ``"unnormalized"``, ``"normalized"`` or ``"degenerate"``
    (a_orth(u, u) numerically zero).  ``norm_sign`` is the sign of
    a_orth(u, u) once normalized, 0 otherwise.
    """

    beta_sq: complex
    beta: complex
    u: np.ndarray
    p: np.ndarray
    residual: float
    backward_error: float = float("nan")
    norm_state: str = "unnormalized"
    norm_sign: int = 0
    schur_residual: float = float("nan")
    classification: str = ""


@dataclass
class ModeCluster:
    """Modes whose β² coincide with a conjugate of each other.

    ``gram[k, l] = a_orth(u_l, u_k)`` over ``members``.
    """

    members: tuple
    gram: np.ndarray
    degenerate: bool = False


@dataclass
class ModeSet:
    modes: list
    omega: float
    sigma: complex
    mesh: object
    blocks: fem.PencilBlocks
    pencil: str = "vd1"
    excluded: list = field(default_factory=list)
    cutoff: float = float("inf")
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    @property
    def beta_sq(self):
        return np.array([m.beta_sq for m in self.modes], dtype=complex)

    @property
    def U(self):
        """Edge coefficients as columns, shape (n_e, len(self))."""
        if not self.modes:
            return np.zeros((self.blocks.n_e, 0), dtype=complex)
        return np.column_stack([m.u for m in self.modes])


# ----------------------------------------------------------------------------
# per-mode post-processing

def select_branch(beta_sq, real_tol=REAL_TOL):
    """Root β of β² with β > 0 when (numerically) real and Im β > 0 otherwise."""
    beta_sq = complex(beta_sq)
    if beta_sq == 0:
        raise ValueError("beta_sq = 0 is a cutoff; no branch can be chosen")
    beta = np.sqrt(beta_sq)
    if abs(beta.imag) <= real_tol * abs(beta):
        return complex(abs(beta.real), 0.0)
    if beta.imag < 0:
        beta = -beta
    return complex(beta)


def classify(beta, real_tol=REAL_TOL):
    if beta.imag == 0.0:
        return PROPAGATING
    if abs(beta.real) <= real_tol * abs(beta):
        return EVANESCENT
    return COMPLEX


def normalize_mode(blocks, omega, mode, degenerate_tol=DEGENERATE_TOL):
    """Scale so that |a_orth(u, u)| = 1; sign recorded in ``norm_sign``."""
    u = np.asarray(mode.u)
    nu = np.linalg.norm(u)
    if nu == 0:
        raise ValidationError("cannot normalize a mode with zero transverse field")
    a = fem.a_orth(blocks, omega, u, u).real
    if abs(a) < degenerate_tol * nu ** 2:
        log.warning("mode with beta^2=%s has a_orth(u,u)~0; left unit-2-norm scaled",
                    mode.beta_sq)
        return replace(mode, u=u / nu, p=np.asarray(mode.p) / nu,
                       norm_state="degenerate", norm_sign=0)
    c = 1.0 / np.sqrt(abs(a))
    return replace(mode, u=u * c, p=np.asarray(mode.p) * c,
                   norm_state="normalized", norm_sign=int(np.sign(a)))


def schur_residual(blocks, omega, mode, lu=None):
    """Residual of the mode in the form with E₃ eliminated, ‖r‖/‖u‖.

    r = (C - ω²Me) u + β² (Mmu u + Gdivᵀ s),  (Kv - ω²Mv) s = -Gdiv u.
    """
    u = np.asarray(mode.u)
    if lu is None:
        lu = _helmholtz_lu(blocks, omega)
    gu = blocks.Gdiv @ u
    s = -lu.solve(gu.astype(complex)) if blocks.n_v else np.zeros(0, complex)
    r = fem.transverse_operator(blocks, omega) @ u \
        + mode.beta_sq * (blocks.Mmu @ u + blocks.Gdiv.T @ s)
    return float(np.linalg.norm(r) / np.linalg.norm(u))


def e3_recovery_residual(blocks, omega, mode):
    """Backward error of E₃ = p/(iβ) in (-Kv + ω²Mv)(iβE₃) = β² Gdiv u."""
    e3 = np.asarray(mode.p) / (1j * mode.beta)
    H = (-blocks.Kv + omega ** 2 * blocks.Mv)
    r = H @ (1j * mode.beta * e3) - mode.beta_sq * (blocks.Gdiv @ mode.u)
    scale = (_norm1(H) * np.linalg.norm(mode.p)
             + abs(mode.beta_sq) * _norm1(blocks.Gdiv) * np.linalg.norm(mode.u))
    return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def _helmholtz_lu(blocks, omega):
    if not blocks.n_v:
        return None
    try:
        return splu(fem.scalar_helmholtz(blocks, omega).astype(complex).tocsc())
    except RuntimeError as exc:
        raise SolverError(f"scalar Helmholtz solve failed: {exc}") from None


# ----------------------------------------------------------------------------
# mode-set checks

def orthogonality_matrix(blocks, omega, modeset):
    """O[j, k] = a_orth(u_k, u_j)."""
    U = modeset.U
    return U.conj().T @ (fem.transverse_operator(blocks, omega) @ U)


def _related(lj, lk, tol):
    return abs(lj - np.conj(lk)) <= tol * max(abs(lj), 1.0)


def orthogonality_violations(blocks, omega, modeset, cluster_tol=CLUSTER_TOL,
                             orth_tol=ORTH_TOL):
    """Pairs (j, k, |O[j, k]|) breaking the discrete orthogonality relation."""
    O = orthogonality_matrix(blocks, omega, modeset)
    lam = modeset.beta_sq
    bad = []
    worst = 0.0
    for j in range(len(lam)):
        for k in range(len(lam)):
            if _related(lam[j], lam[k], cluster_tol):
                continue
            v = abs(O[j, k])
            worst = max(worst, v)
            if v > orth_tol:
                bad.append((j, k, v))
    return bad, worst


def detect_clusters(modeset, cluster_tol=CLUSTER_TOL, degenerate_tol=DEGENERATE_TOL):
    """Partition modes by β_j² ≈ conj(β_k²) (transitive closure)."""
    lam = modeset.beta_sq
    n = len(lam)
    parent = list(range(n))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for j in range(n):
        for k in range(j + 1, n):
            if _related(lam[j], lam[k], cluster_tol):
                rj, rk = root(j), root(k)
                parent[max(rj, rk)] = min(rj, rk)
    groups = {}
    for i in range(n):
        groups.setdefault(root(i), []).append(i)

    S = fem.transverse_operator(modeset.blocks, modeset.omega)
    clusters = []
    for members in sorted(groups.values()):
        U = np.column_stack([modeset.modes[i].u for i in members])
        G = U.conj().T @ (S @ U)
        sv = np.linalg.svd(G, compute_uv=False)
        degenerate = bool(sv[-1] <= degenerate_tol * max(sv[0], 1.0))
        if degenerate:
            log.warning("modes %s form a degenerate cluster (singular Gram matrix)", members)
        clusters.append(ModeCluster(tuple(members), G, degenerate))
    return clusters


def spectral_symmetry_check(modeset, tol=1e-8):
    """Is the β² multiset closed under conjugation?  Returns (ok, unmatched values)."""
    lam = list(modeset.beta_sq) if isinstance(modeset, ModeSet) else list(modeset)
    used = [False] * len(lam)
    unmatched = []
    for i, li in enumerate(lam):
        if used[i]:
            continue
        scale = tol * max(abs(li), 1.0)
        if abs(li.imag) <= scale:
            used[i] = True
            continue
        partner = next((j for j in range(len(lam)) if j != i and not used[j]
                        and abs(lam[j] - np.conj(li)) <= scale), None)
        used[i] = True
        if partner is None:
            unmatched.append(complex(li))
        else:
            used[partner] = True
    return not unmatched, unmatched


@dataclass
class SectorReport:
    ok: bool
    violators: list
    n_positive: int
    count_exempt: int


def sector_check(modeset, delta=0.1, count_exempt=0):
    """At most ``count_exempt`` β² may leave the sector |arg β² ∓ π| < δ.

    A value violates when π - |arg β²| > δ, so δ = π admits everything.
    """
    lam = np.array(list(modeset.beta_sq) if isinstance(modeset, ModeSet) else list(modeset),
                   dtype=complex)
    lam = lam[np.argsort(np.abs(lam), kind="stable")]
    violators = [complex(v) for v in lam if np.pi - abs(np.angle(v)) > delta]
    n_pos = int(np.sum(lam.real > 0))
    return SectorReport(len(violators) <= count_exempt, violators, n_pos, count_exempt)


# ----------------------------------------------------------------------------
# solve orchestration

def default_shift(mesh, materials, omega):
    return omega ** 2 * materials.max_eps_mu(mesh)


def _phase_fix(x):
    """Rotate so the largest-magnitude entry is real positive (ties: first)."""
    i = int(np.argmax(np.abs(x)))
    if x[i] == 0:
        return x
    return x * (abs(x[i]) / x[i])


def _realify(X):
    """Real orthonormal basis of span(X) when that span is conjugation-closed."""
    R = np.hstack([X.real, X.imag])
    Uq, s, _ = np.linalg.svd(R, full_matrices=False)
    k = X.shape[1]
    return Uq[:, :k].astype(complex)


def _eigenpairs(A, B, sigma, nev, tol, seed, dense_threshold):
    n = A.shape[0]
    if n <= dense_threshold or nev >= n - 1:
        lam, X = dense_oracle_eigs(A, B, sigma, cap=max(DENSE_CAP, n), return_vectors=True)
        na, nb = _norm1(A), _norm1(B)
        pairs = []
        for i in range(min(nev, len(lam))):
            x = X[:, i] / np.linalg.norm(X[:, i])
            r = pencil_residual(A, B, lam[i], x)
            pairs.append(RitzPair(complex(lam[i]), x, r, r / (na + abs(lam[i]) * nb)))
        return pairs
    return shift_invert_arnoldi(A, B, sigma, nev=nev, tol=tol, seed=seed)


def _shifted_solve(A, B, sigma, nev, tol, seed, dense_threshold, retries=4):
    """Eigenpairs near sigma; nudge the shift if it lands on the spectrum."""
    s = sigma
    for attempt in range(retries + 1):
        try:
            return s, _eigenpairs(A, B, s, nev, tol, seed, dense_threshold)
        except FactorizationError:
            if attempt == retries:
                raise
            s = sigma + (1e-6 * 10 ** attempt) * max(abs(sigma), 1.0)
            log.warning("shift hit the spectrum; retrying at sigma=%r", s)


def solve_modes(mesh, materials, omega, num_modes=12, shift=None, pencil="vd1",
                pec_tags=(fem.PEC,), real_tol=REAL_TOL, cluster_tol=CLUSTER_TOL,
                degenerate_tol=DEGENERATE_TOL, solver_tol=1e-12, cutoff_tol=CUTOFF_TOL,
                check_cutoff=True, seed=0, dense_threshold=None):
    """Compute, branch-select and normalize the ``num_modes`` modes nearest the shift.

    Modes are returned ordered by decreasing Re β² (then Im β²), so
    propagating modes come first.

    Raises
    ------
    CutoffError
        ω² within ``cutoff_tol`` (relative) of a discrete Dirichlet eigenvalue.
    SolverError
        Factorization or convergence failure.
    """
    if omega <= 0:
        raise ValidationError(f"omega must be positive, got {omega}")
    if num_modes < 1:
        raise ValidationError(f"num_modes must be >= 1, got {num_modes}")
    materials.check(mesh)
    dofmap = fem.build_dofmap(mesh, pec_tags)
    blocks = fem.assemble_blocks(mesh, dofmap, materials)
    params = dict(real_tol=real_tol, cluster_tol=cluster_tol, degenerate_tol=degenerate_tol,
                  solver_tol=solver_tol, seed=seed, pencil=pencil)

    dist = cutoff_distance(blocks, omega) if check_cutoff else float("inf")
    if dist < cutoff_tol:
        raise CutoffError(f"omega={omega!r} is within {dist:.3e} (relative) of a cutoff "
                          f"frequency (tolerance {cutoff_tol:g})", distance=dist)

    sigma = default_shift(mesh, materials, omega) if shift is None else shift
    if dofmap.size == 0 or dofmap.n_e == 0:
        log.warning("no free transverse unknowns; the mode set is empty")
        return ModeSet([], omega, sigma, mesh, blocks, pencil, [], dist, params)

    if pencil == "vd1":
        A, B = fem.pencil_vd1(blocks, omega)
    elif pencil == "vd2":
        A, B = fem.pencil_vd2(blocks, omega)
    else:
        raise ValidationError(f"unknown pencil {pencil!r} (expected vd1 or vd2)")

    if dense_threshold is None:
        dense_threshold = 2 * num_modes + 10
    # a couple of spares so that a cluster straddling the cut is kept whole
    nev = num_modes + 2
    sigma, pairs = _shifted_solve(A, B, sigma, nev, solver_tol, seed, dense_threshold)

    near_zero = [p for p in pairs if abs(p.lam) < ZERO_TOL * omega ** 2]
    pairs = [p for p in pairs if abs(p.lam) >= ZERO_TOL * omega ** 2]
    for p in near_zero:
        log.warning("excluding near-zero eigenvalue beta^2=%r (cutoff mode)", p.lam)
    cut = min(num_modes, len(pairs))
    while cut < len(pairs) and abs(pairs[cut].lam - pairs[cut - 1].lam) \
            <= cluster_tol * max(abs(pairs[cut - 1].lam), 1.0):
        cut += 1
    pairs = pairs[:cut]
    pairs = _realify_degenerate(pairs, A, B, cluster_tol, real_tol)

    order = sorted(range(len(pairs)), key=lambda i: (-pairs[i].lam.real, -pairs[i].lam.imag))
    lu = _helmholtz_lu(blocks, omega)
    modes = []
    for i in order:
        pr = pairs[i]
        x = _phase_fix(pr.vector)
        u, p = dofmap.split(x)
        beta = select_branch(pr.lam, real_tol)
        m = Mode(pr.lam, beta, u, p, pr.residual, pr.backward_error,
                 classification=classify(beta, real_tol))
        m = normalize_mode(blocks, omega, m, degenerate_tol)
        m.schur_residual = schur_residual(blocks, omega, m, lu)
        modes.append(m)
    return ModeSet(modes, omega, sigma, mesh, blocks, pencil,
                   [complex(p.lam) for p in near_zero], dist, params)


def _realify_degenerate(pairs, A, B, cluster_tol, real_tol):
    """Replace bases of multiple real eigenvalues by real bases (deterministic, real N)."""
    out = list(pairs)
    i = 0
    na, nb = _norm1(A), _norm1(B)
    while i < len(out):
        j = i + 1
        while j < len(out) and abs(out[j].lam - out[i].lam) <= cluster_tol * max(abs(out[i].lam), 1.0):
            j += 1
        group = out[i:j]
        if len(group) > 1 and all(abs(p.lam.imag) <= real_tol * abs(p.lam) for p in group):
            X = _realify(np.column_stack([p.vector for p in group]))
            for k, p in enumerate(group):
                lam = complex(p.lam.real)
                r = pencil_residual(A, B, lam, X[:, k])
                out[i + k] = RitzPair(lam, X[:, k], r, r / (na + abs(lam) * nb))
        i = j
    return out


# ----------------------------------------------------------------------------
# verification and export

@dataclass
class Check:
    name: str
    ok: bool
    value: float
    detail: str = ""


def verification_report(modeset, other=None, cluster_tol=CLUSTER_TOL, orth_tol=ORTH_TOL,
                        schur_tol=1e-6, equiv_tol=1e-6, sector_delta=0.1, count_exempt=None):
    """Property checks on a solved mode set; ``other`` is a cross-solve with the other pencil."""
    blocks, omega = modeset.blocks, modeset.omega
    checks = []
    _, worst = orthogonality_violations(blocks, omega, modeset, cluster_tol, orth_tol)
    checks.append(Check("orthogonality", worst <= orth_tol, worst))
    dev = max((abs(abs(fem.a_orth(blocks, omega, m.u, m.u)) - 1) for m in modeset
               if m.norm_state == "normalized"), default=0.0)
    checks.append(Check("normalization", dev <= 1e-10, dev))
    ok, unmatched = spectral_symmetry_check(modeset)
    checks.append(Check("spectral-symmetry", ok, float(len(unmatched)),
                        " ".join(repr(v) for v in unmatched)))
    if count_exempt is None:
        count_exempt = int(np.sum(modeset.beta_sq.real > 0))
    rep = sector_check(modeset, sector_delta, count_exempt)
    checks.append(Check("sector", rep.ok, float(len(rep.violators)),
                        f"positive={rep.n_positive} exempt={rep.count_exempt}"))
    worst_schur = max((m.schur_residual for m in modeset), default=0.0)
    checks.append(Check("schur-residual", worst_schur <= schur_tol, worst_schur))
    worst_e3 = max((e3_recovery_residual(blocks, omega, m) for m in modeset), default=0.0)
    checks.append(Check("e3-recovery", worst_e3 <= 1e-8, worst_e3))
    if other is not None:
        a, b = np.sort_complex(modeset.beta_sq), np.sort_complex(other.beta_sq)
        n = min(len(a), len(b))
        rel = float(np.max(np.abs(a[:n] - b[:n]) / np.maximum(np.abs(a[:n]), 1.0))) if n else 0.0
        checks.append(Check("vd1-vd2-agreement", rel <= equiv_tol and len(a) == len(b), rel))
    return checks


CSV_COLUMNS = ("index", "re_beta_sq", "im_beta_sq", "re_beta", "im_beta",
               "classification", "residual", "schur_residual")


def _g(x):
    return repr(float(x))


def mode_table(modeset):
    """CSV mode table as a string (floats in shortest round-trip form)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, m in enumerate(modeset):
        w.writerow([i, _g(m.beta_sq.real), _g(m.beta_sq.imag), _g(m.beta.real),
                    _g(m.beta.imag), m.classification, _g(m.residual), _g(m.schur_residual)])
    return buf.getvalue()


def write_mode_table(modeset, path):
    with open(path, "w", newline="") as f:
        f.write(mode_table(modeset))
