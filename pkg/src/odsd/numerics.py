"""Dense numeric substrate: softmax, cosine, k-means, symmetric eigensolver and its adjoint, Huber.

Matrices are plain 2-D ``float64`` numpy arrays; :func:`as_matrix` is the
single entry point that enforces shape and finiteness.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractViolation, DegenerateVectorError, ReduceK


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array or raise :class:`ContractViolation`."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ContractViolation(f"{name}: expected a 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation(f"{name}: contains NaN or Inf")
    return m


def softmax(v, axis=-1):
    """Numerically stable softmax along ``axis`` (works row-wise on matrices)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ContractViolation("softmax of an empty input")
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    z = v - v.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cosine(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"cosine: length mismatch {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("cosine: zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def row_normalize(X):
    """Rows of ``X`` scaled to unit length, plus the original norms."""
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateVectorError(f"zero-norm row at index {int(np.argmin(norms))}")
    return X / norms[:, None], norms


def cosine_matrix(A, B):
    """All pairwise cosines between rows of ``A`` and rows of ``B``, clamped to [-1, 1]."""
    ua, _ = row_normalize(np.asarray(A, dtype=np.float64))
    ub, _ = row_normalize(np.asarray(B, dtype=np.float64))
    return np.clip(ua @ ub.T, -1.0, 1.0)


# --------------------------------------------------------------------- k-means


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    objective: float
    n_iter: int


HARTIGAN_MAX_PASSES = 100


def kmeans_objective(X, centers, labels):
    return float(((X - centers[labels]) ** 2).sum())


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def _centers_from_labels(X, labels, k):
    C = np.zeros((k, X.shape[1]))
    np.add.at(C, labels, X)
    return C / np.bincount(labels, minlength=k)[:, None]


def kmeans(points, k, rng_seed=0, n_init=10, refine=True):
    """Lloyd's algorithm with k-means++ seeding, best of ``n_init`` restarts.

    Each Lloyd fixed point is polished with Hartigan single-point moves
    (``refine``), which only ever lowers the objective and leaves a partition
    that is still a Lloyd fixed point.  All restarts draw from one generator
    seeded with ``rng_seed`` so the result is a pure function of the inputs.
    Raises :class:`ReduceK` when ``k`` exceeds the number of points.
    """
    X = as_matrix(points, "points")
    n = X.shape[0]
    if n == 0:
        raise ContractViolation("kmeans on an empty point set")
    if k < 1:
        raise ContractViolation(f"kmeans: k must be >= 1, got {k}")
    if n < k:
        raise ReduceK(n, k)
    rng = np.random.default_rng(rng_seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp(X, k, rng)
        C, labels, n_iter = _kernels.lloyd(X, init)
        if refine and k > 1:
            labels = _kernels.hartigan(X, labels, HARTIGAN_MAX_PASSES)
            C = _centers_from_labels(X, labels, k)
        obj = kmeans_objective(X, C, labels)
        if best is None or obj < best.objective:
            best = KMeansResult(C, labels, obj, n_iter)
    return best


# ------------------------------------------------------------ eigendecomposition


@dataclass(frozen=True)
class EigResult:
    """Eigenvalues in descending order and matching unit eigenvector columns."""
    values: np.ndarray
    vectors: np.ndarray


def fix_signs(V):
    """Flip columns so the entry of largest magnitude is non-negative (first index on ties)."""
    V = V.copy()
    if V.size == 0:
        return V
    rows = np.argmax(np.abs(V), axis=0)
    flip = V[rows, np.arange(V.shape[1])] < 0
    V[:, flip] *= -1.0
    return V


def sym_eig(M, sym_tol=1e-10):
    M = as_matrix(M, "sym_eig input")
    n, n2 = M.shape
    if n != n2:
        raise ContractViolation(f"sym_eig: matrix must be square, got {M.shape}")
    asym = np.abs(M - M.T).max() if n else 0.0
    if asym > sym_tol * max(1.0, np.abs(M).max()):
        raise ContractViolation(f"sym_eig: matrix is not symmetric (max |M - M^T| = {asym:.3g})")
    S = 0.5 * (M + M.T)
    w, V = _kernels.eigh_raw(S)
    order = np.argsort(-w, kind="stable")
    V = V[:, order]
    # unit columns to 1e-12 whichever backend produced them
    V = V / np.linalg.norm(V, axis=0)
    return EigResult(w[order].copy(), fix_signs(V))


def sym_eig_backward(eig, grad_values, grad_vectors, eps=1e-8):
    """Gradient w.r.t. the symmetric input of a scalar that depends on (values, vectors).

    Uses the damped gap factor ``(l_j - l_i) / ((l_j - l_i)**2 + eps)`` so
    repeated eigenvalues give a finite (if approximate) result.
    """
    lam = eig.values
    V = eig.vectors
    n = lam.shape[0]
    gl = np.asarray(grad_values, dtype=np.float64)
    gV = np.asarray(grad_vectors, dtype=np.float64)
    if gl.shape != (n,) or gV.shape != V.shape:
        raise ContractViolation(
            f"sym_eig_backward: expected grads of shape {(n,)} and {V.shape}, got {gl.shape} and {gV.shape}"
        )
    if eps <= 0:
        raise ContractViolation("sym_eig_backward: damping must be positive")
    diff = lam[None, :] - lam[:, None]
    F = diff / (diff * diff + eps)
    np.fill_diagonal(F, 0.0)
    inner = F * (V.T @ gV)
    inner[np.diag_indices(n)] += gl
    g = V @ inner @ V.T
    return 0.5 * (g + g.T)


# ------------------------------------------------------------------------ huber


def huber(A, B, delta=1.0):
    """Mean Huber loss between ``A`` and ``B`` and its gradient w.r.t. ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ContractViolation(f"huber: shape mismatch {A.shape} vs {B.shape}")
    if delta <= 0:
        raise ContractViolation("huber: delta must be positive")
    if A.size == 0:
        return 0.0, np.zeros_like(B)
    r = A - B
    ar = np.abs(r)
    quad = ar <= delta
    loss = np.where(quad, 0.5 * r * r, delta * (ar - 0.5 * delta))
    dr = np.where(quad, r, delta * np.sign(r))
    return float(loss.mean()), -dr / r.size
