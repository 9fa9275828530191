"""Dense symmetric-matrix kernel.

Half-vectorization, elimination maps, the vech covariance of the
symmetric matrix-normal law, matrix norms and a checked Cholesky.

Indices are 0-based throughout; ``vech`` runs down the columns of the
lower triangle, (0,0), (1,0), ..., (p-1,0), (1,1), ..., (p-1,p-1).
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

SYM_RTOL = 1e-10
PSD_RTOL = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix fails a Cholesky factorization.

    ``minor`` is the 1-based order of the first leading minor that is
    not positive.
    """

    def __init__(self, minor, msg=None):
        self.minor = minor
        super().__init__(msg or f"matrix is not positive definite (leading minor {minor})")


def check_symmetric(a, rtol=SYM_RTOL):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return a


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def vech_indices(p):
    """Row and column indices of the lower triangle in vech order."""
    cols, rows = np.triu_indices(p)
    return rows, cols


def vech(a):
    """Stack the lower triangle of ``a`` column by column.

    Works on a single matrix or on a stack with shape ``(..., p, p)``.
    """
    a = np.asarray(a)
    p = a.shape[-1]
    rows, cols = vech_indices(p)
    return a[..., rows, cols]


def triangular_root(m):
    """Return p with p(p+1)/2 == m, or raise ValueError."""
    p = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if p * (p + 1) // 2 != m or m < 1:
        raise ValueError(f"length {m} is not a triangular number")
    return p


def vech_inverse(v):
    """Rebuild the symmetric matrix whose vech is ``v`` (last axis)."""
    v = np.asarray(v, dtype=float)
    p = triangular_root(v.shape[-1])
    rows, cols = vech_indices(p)
    out = np.zeros(v.shape[:-1] + (p, p))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def vec(a):
    """Column-stacking vectorization."""
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (-1,))


def vech_labels(p, one_based=True):
    rows, cols = vech_indices(p)
    off = 1 if one_based else 0
    return [f"({i + off},{j + off})" for i, j in zip(rows, cols)]


def _selection_map(p, rows, cols):
    # one 1 per row, at the column of e_j (x) e_i inside vec
    m = len(rows)
    data = np.ones(m)
    return sp.csr_matrix((data, (np.arange(m), cols * p + rows)), shape=(m, p * p))


def elimination_matrix(p):
    """Sparse p(p+1)/2 x p^2 map with ``elimination_matrix(p) @ vec(A) == vech(A)``.

    Row ``(j-1)p + i - j(j-1)/2`` (1-based, j <= i) has its single one in
    column ``(j-1)p + i``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    rows, cols = vech_indices(p)
    return _selection_map(p, rows, cols)


def graph_indices(p, edges):
    """vech-ordered (row, col) pairs kept by a graph: the diagonal plus every edge."""
    rows, cols = vech_indices(p)
    mask = graph_mask(p, edges)
    return rows[mask], cols[mask]


def graph_mask(p, edges):
    """Boolean mask over vech coordinates marking the free ones for a graph."""
    keep = set()
    for i, j in edges:
        keep.add((max(i, j), min(i, j)))
    rows, cols = vech_indices(p)
    return np.array([r == c or (r, c) in keep for r, c in zip(rows, cols)], dtype=bool)


def graph_elimination_map(graph):
    """Sparse (p + |E|) x p^2 map extracting vech* (free coordinates) from vec."""
    rows, cols = graph_indices(graph.p, graph.edges)
    return _selection_map(graph.p, rows, cols)


def _commutes(a, b, rtol=SYM_RTOL):
    ab = a @ b
    return np.max(np.abs(ab - b @ a)) <= rtol * max(np.max(np.abs(ab)), 1.0) * a.shape[0]


def smn_halfvec_cov(psi1, psi2, factor=1.0, graph=None, mode="density"):
    """Covariance of vech(X) (or vech*(X)) under the symmetric matrix-normal law.

    Full case, entrywise::

        Cov(X_ij, X_kl) = factor / 2 * (psi1_ik psi2_jl + psi1_il psi2_jk)

    For ``psi1 == psi2 == psi`` this is the covariance implied by the density
    ``exp(-tr(psi^-1 X psi^-1 X) / (2 factor))`` on symmetric matrices.

    With a graph, the law lives on matrices with zeros off the graph.
    ``mode="density"`` restricts the trace-form density to those matrices,
    so the result is the inverse of the free block of the full precision
    (the Gaussian conditioned on the non-edge coordinates being zero).
    ``mode="marginal"`` takes the free block of the full covariance instead.
    The two coincide when the full covariance is block diagonal, e.g. psi = I.
    """
    psi1 = check_symmetric(psi1)
    psi2 = check_symmetric(psi2)
    if psi1.shape != psi2.shape:
        raise ValueError("scale matrices differ in shape")
    if factor <= 0:
        raise ValueError("factor must be positive")
    if not _commutes(psi1, psi2):
        err = np.max(np.abs(psi1 @ psi2 - psi2 @ psi1))
        raise ValueError(f"scale matrices do not commute (max |psi1 psi2 - psi2 psi1| = {err:.3g})")
    p = psi1.shape[0]
    rows, cols = vech_indices(p)
    i, j = rows[:, None], cols[:, None]
    k, l = rows[None, :], cols[None, :]
    cov = 0.5 * factor * (psi1[i, k] * psi2[j, l] + psi1[i, l] * psi2[j, k])
    cov = symmetrize(cov)

    if graph is not None:
        if graph.p != p:
            raise ValueError("graph size does not match scale matrices")
        mask = graph_mask(p, graph.edges)
        if mode == "marginal":
            cov = cov[np.ix_(mask, mask)]
        elif mode == "density":
            if mask.all():
                pass
            else:
                prec = np.linalg.inv(cov)
                cov = symmetrize(np.linalg.inv(prec[np.ix_(mask, mask)]))
        else:
            raise ValueError(f"unknown mode {mode!r}")

    w = np.linalg.eigvalsh(cov)
    if w[0] < -PSD_RTOL * max(np.max(np.diag(cov)), 1.0):
        raise ValueError(f"vech covariance is not PSD (min eigenvalue {w[0]:.3g})")
    return cov


def norms(a):
    """Spectral, Frobenius, max-entry and (inf, inf) norms of a matrix."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return {
        "spectral": float(np.linalg.norm(a, 2)),
        "frobenius": float(np.linalg.norm(a, "fro")),
        "max": float(np.max(np.abs(a))),
        "inf_inf": float(np.max(np.sum(np.abs(a), axis=1))),
    }


def spectral_norm(a):
    """Spectral norm of a symmetric matrix or a stack of them."""
    w = np.linalg.eigvalsh(symmetrize(a))
    return np.max(np.abs(w), axis=-1)


def cholesky(a):
    """Lower Cholesky factor; raises NotPositiveDefiniteError naming the failing minor."""
    a = check_symmetric(a)
    p = a.shape[0]
    low = np.zeros_like(a)
    for j in range(p):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0:
            raise NotPositiveDefiniteError(j + 1)
        low[j, j] = math.sqrt(d)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def is_positive_definite(a):
    try:
        np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError:
        return False
    return True


def logdet_pd(a):
    """log det of a positive definite matrix (or stack); -inf where not PD."""
    a = symmetrize(a)
    w = np.linalg.eigvalsh(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.all(w > 0, axis=-1), np.sum(np.log(np.abs(w)), axis=-1), -np.inf)
    return out


def ar1(p, rho):
    """AR(1) correlation matrix rho^|i-j|."""
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
