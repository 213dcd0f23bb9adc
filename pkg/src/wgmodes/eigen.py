"""Generalized eigenproblems A x = λ B x near a shift.

The sparse path runs a Krylov-Schur restarted Arnoldi iteration on the
shift-inverted operator ``(A - σB)^-1 B`` with a SuperLU factorization.
Eigenvalues θ of that operator map back through ``λ = σ + 1/θ``; θ close to
zero belong to the null space of B (infinite eigenvalues) and are dropped.

A single Krylov sequence sees only one direction of a multiple eigenvalue,
so after convergence the solver restarts on the deflated operator (new
vectors kept orthogonal to the converged Schur basis) until no missing
eigenvalue turns up above the acceptance threshold.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, FactorizationError

log = logging.getLogger(__name__)

THETA_FLOOR = 1e-10
DENSE_CAP = 2000


@dataclass
class RitzPair:
    """Approximate eigenpair; ``vector`` has unit 2-norm.

    ``residual`` is ||A x - λ B x|| / ||x||; ``backward_error`` divides it by
    ||A||_1 + |λ| ||B||_1.
    """

    lam: complex
    vector: np.ndarray
    residual: float
    backward_error: float


def factorize(A, B, sigma):
    """Sparse LU of A - σB (COLAMD ordering)."""
    K = (sp.csc_matrix(A, dtype=complex) - sigma * sp.csc_matrix(B, dtype=complex)).tocsc()
    try:
        lu = splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise FactorizationError(f"A - sigma*B is singular at sigma={sigma}: {exc}; "
                                 "perturb the shift") from None
    piv = np.abs(lu.U.diagonal())
    if len(piv) and piv.min() <= K.shape[0] * np.finfo(float).eps * piv.max():
        raise FactorizationError(f"A - sigma*B is numerically singular at sigma={sigma}; "
                                 "perturb the shift")
    return lu


def pencil_residual(A, B, lam, x):
    x = np.asarray(x)
    return float(np.linalg.norm(A @ x - lam * (B @ x)) / np.linalg.norm(x))


def _norm1(M):
    return float(abs(M).sum(axis=0).max()) if M.shape[0] else 0.0


def _orthogonalize(w, V, L):
    """Classical Gram-Schmidt, applied twice; returns (w, coefficients on V)."""
    h = np.zeros(V.shape[1], dtype=complex)
    for _ in range(2):
        if L is not None:
            w = w - L @ (L.conj().T @ w)
        c = V.conj().T @ w
        w = w - V @ c
        h += c
    return w, h


def _reorder(T, Z, select):
    Ts, Zs, _, _, _, _, info = lapack.ztrsen(select.astype(np.int32), T, Z, job="N")
    if info != 0:
        raise ConvergenceError(f"Schur reordering failed (info={info})")
    return Ts, Zs


def _top(theta, k):
    """Boolean mask of the k entries of largest magnitude (stable on ties)."""
    idx = np.argsort(-np.abs(theta), kind="stable")[:k]
    mask = np.zeros(len(theta), dtype=bool)
    mask[idx] = True
    return mask


def _krylov_schur(op, n, nwanted, m, tol, max_restarts, rng, locked=None):
    """Partial Schur form op Q ≈ Q T for the nwanted largest |θ|, Q ⟂ locked."""
    V = np.zeros((n, m + 1), dtype=complex)
    H = np.zeros((m + 1, m), dtype=complex)

    def fresh(Vcur):
        for _ in range(3):
            w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            w, _ = _orthogonalize(w, Vcur, locked)
            nw = np.linalg.norm(w)
            if nw > 1e-8:
                return w / nw
        # whole space spanned: a zero column contributes only θ = 0
        return np.zeros(n, dtype=complex)

    v = op(fresh(V[:, :0]))          # one application purges null(B) components
    v, _ = _orthogonalize(v, V[:, :0], locked)
    V[:, 0] = v / np.linalg.norm(v)
    k = 0
    hscale = 0.0
    keep = min(m - 1, nwanted + max(1, (m - nwanted) // 2))
    resid = None
    for restart in range(max_restarts + 1):
        for j in range(k, m):
            w, h = _orthogonalize(op(V[:, j]), V[:, :j + 1], locked)
            beta = np.linalg.norm(w)
            H[:j + 1, j] = h
            hscale = max(hscale, np.linalg.norm(h), beta)
            if beta <= 1e-13 * hscale:
                # invariant subspace reached; continue with an orthogonal vector
                H[j + 1, j] = 0.0
                V[:, j + 1] = fresh(V[:, :j + 1])
            else:
                H[j + 1, j] = beta
                V[:, j + 1] = w / beta

        T, Z = la.schur(H[:m, :m], output="complex")
        T, Z = _reorder(T, Z, _top(np.diag(T), keep))
        b = H[m, :m] @ Z
        ritz_theta, Y = la.eig(T[:keep, :keep])
        Y /= np.linalg.norm(Y, axis=0)
        resid = np.abs(b[:keep] @ Y)
        order = np.argsort(-np.abs(ritz_theta), kind="stable")[:nwanted]
        converged = resid[order] <= tol * np.abs(ritz_theta[order])
        if np.all(converged):
            T, Z = _reorder(T, Z, _top(np.diag(T), nwanted))
            Q = V[:, :m] @ Z[:, :nwanted]
            return Q, T[:nwanted, :nwanted], resid[order]
        log.debug("restart %d: %d/%d converged", restart, int(converged.sum()), nwanted)

        V[:, :keep] = V[:, :m] @ Z[:, :keep]
        V[:, keep] = V[:, m]
        H[:] = 0.0
        H[:keep, :keep] = T[:keep, :keep]
        H[keep, :keep] = b[:keep]
        k = keep
    raise ConvergenceError(f"Arnoldi did not converge in {max_restarts} restarts",
                           residuals=resid)


def shift_invert_arnoldi(A, B, sigma, nev=6, krylov_dim=None, tol=1e-12, max_restarts=500,
                         theta_floor=THETA_FLOOR, seed=0, deflation_passes=True):
    """The ``nev`` finite eigenpairs of (A, B) nearest ``sigma``.

    Parameters
    ----------
    A, B : sparse (n, n)
    sigma : complex shift; A - sigma*B must be nonsingular
    nev : number of eigenpairs
    krylov_dim : Arnoldi basis size, > nev (default max(2*nev + 1, 20))
    tol : relative Ritz residual on the shift-inverted operator
    theta_floor : θ with |θ| <= theta_floor * max|θ| count as infinite λ
    seed : seed of the random start vector (results are deterministic)

    Returns
    -------
    list of RitzPair sorted by |λ - σ|.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n = A.shape[0]
    if nev < 1:
        raise ValueError("nev must be >= 1")
    if nev >= n:
        raise ValueError(f"nev={nev} must be smaller than the problem size {n}; "
                         "use dense_oracle_eigs for tiny problems")
    m = krylov_dim if krylov_dim is not None else max(2 * nev + 1, 20)
    m = min(m, n)
    if m <= nev:
        raise ValueError("krylov_dim must exceed nev")

    lu = factorize(A, B, sigma)
    Bc = B.astype(complex)

    def op(v):
        return lu.solve(Bc @ v)

    rng = np.random.default_rng(seed)
    Q, T, _ = _krylov_schur(op, n, nev, m, tol, max_restarts, rng)
    theta = np.diag(T)

    while deflation_passes and Q.shape[1] + 2 <= n:
        thresh = np.sort(np.abs(theta))[::-1][nev - 1]
        nd = min(3, n - Q.shape[1] - 1)
        md = min(max(2 * nd + 1, 20), n - Q.shape[1])
        if md <= nd:
            break
        Qd, Td, _ = _krylov_schur(op, n, nd, md, tol, max_restarts, rng, locked=Q)
        missing = np.abs(np.diag(Td)) > thresh * (1 + 1e-10)
        if not np.any(missing):
            break
        log.debug("deflation pass found %d missed eigenvalue(s)", int(missing.sum()))
        Qall, _ = np.linalg.qr(np.hstack([Q, Qd]))
        Hall = Qall.conj().T @ np.column_stack([op(q) for q in Qall.T])
        Tall, Zall = la.schur(Hall, output="complex")
        Q, T = Qall @ Zall, Tall
        theta = np.diag(T)

    thetas, Y = la.eig(T)
    X = Q @ Y
    keep = np.abs(thetas) > theta_floor * np.abs(thetas).max()
    order = [i for i in np.argsort(-np.abs(thetas), kind="stable") if keep[i]][:nev]
    na, nb = _norm1(A), _norm1(B)
    pairs = []
    for i in order:
        x = X[:, i] / np.linalg.norm(X[:, i])
        lam = sigma + 1.0 / thetas[i]
        r = pencil_residual(A, B, lam, x)
        pairs.append(RitzPair(complex(lam), x, r, r / (na + abs(lam) * nb)))
    return pairs


def dense_oracle_eigs(A, B, sigma, cap=DENSE_CAP, theta_floor=THETA_FLOOR, return_vectors=False):
    """All finite eigenvalues of (A, B) from a dense eigendecomposition of (A - σB)^-1 B.

    Sorted by |λ - σ|.  With ``return_vectors`` also returns the matching
    eigenvectors as columns.
    """
    n = A.shape[0]
    if n > cap:
        raise ValueError(f"dense oracle limited to {cap} dofs, got {n}")
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
    K = Ad.astype(complex) - sigma * Bd.astype(complex)
    with warnings.catch_warnings():
        # singularity is detected from the pivots below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(K, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= n * np.finfo(float).eps * max(d.max(), 1e-300):
        raise FactorizationError(f"A - sigma*B is singular at sigma={sigma}")
    M = la.lu_solve((lu, piv), Bd.astype(complex))
    if return_vectors:
        theta, X = np.linalg.eig(M)
    else:
        theta, X = np.linalg.eigvals(M), None
    if not len(theta):
        return (np.zeros(0, complex), np.zeros((0, 0), complex)) if return_vectors else np.zeros(0, complex)
    keep = np.abs(theta) > theta_floor * np.abs(theta).max()
    lam = sigma + 1.0 / theta[keep]
    order = np.argsort(np.abs(lam - sigma), kind="stable")
    if return_vectors:
        return lam[order], X[:, keep][:, order]
    return lam[order]


def cutoff_distance(blocks, omega, nev=4):
    """Relative distance min_k |ω_k² - ω²| / ω² to the discrete Dirichlet spectrum of (Kv, Mv).

    Returns ``inf`` when there are no free vertices.
    """
    K, M = blocks.Kv, blocks.Mv
    n = K.shape[0]
    w2 = omega ** 2
    if n == 0:
        return float("inf")
    if n <= 50:
        kappa = la.eigh(K.toarray(), M.toarray(), eigvals_only=True)
    else:
        # offset keeps the factorization regular when ω² sits on an eigenvalue
        sigma = w2 * (1 + 1e-3) if w2 > 0 else 1e-3
        pairs = shift_invert_arnoldi(K, M, sigma, nev=min(nev, n - 1), seed=1)
        kappa = np.array([p.lam.real for p in pairs])
    return float(np.min(np.abs(kappa - w2)) / w2)
