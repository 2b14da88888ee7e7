"""Distillation objective: KD + spatial-mapping denoise + two contrastive relational terms.

Every loss returns ``(value, grad)`` where ``grad`` is the gradient with
respect to the student logits; the teacher is always a constant target.
Contrastive terms use the kernel ``exp(cos(a, b) / tau)``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .numerics import as_matrix, huber, log_softmax, row_normalize, sym_eig, sym_eig_backward

LAYOUTS = ("plain", "paired")


@dataclass(frozen=True)
class BatchOutputs:
    teacher: np.ndarray
    student: np.ndarray
    layout: str = "paired"

    def __post_init__(self):
        T = as_matrix(self.teacher, "teacher outputs")
        S = as_matrix(self.student, "student outputs")
        if T.shape != S.shape:
            raise ContractViolation(f"teacher/student shape mismatch {T.shape} vs {S.shape}")
        if self.layout not in LAYOUTS:
            raise ContractViolation(f"unknown batch layout {self.layout!r}")
        if self.layout == "paired" and T.shape[0] % 2:
            raise ContractViolation(f"paired layout needs an even row count, got {T.shape[0]}")
        object.__setattr__(self, "teacher", T)
        object.__setattr__(self, "student", S)

    @property
    def m(self):
        return self.teacher.shape[0]

    @property
    def n_pairs(self):
        return self.m // 2

    def with_student(self, student):
        return BatchOutputs(self.teacher, student, self.layout)


@dataclass(frozen=True)
class DcrdHyper:
    tau: float = 4.0
    tau1: float = 0.5
    tau2: float = 0.5
    lambda1: float = 10.0
    lambda2: float = 0.5
    delta: float = 1.0
    embed_dim: int | None = None  # None -> min(m - 1, C)
    kd_tau_squared: bool = True
    eig_eps: float = 1e-8

    def __post_init__(self):
        for name in ("tau", "tau1", "tau2", "delta", "eig_eps"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lambda1", "lambda2"):
            if getattr(self, name) < 0:
                raise ContractViolation(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ContractViolation(f"embed_dim must be >= 1, got {self.embed_dim}")


@dataclass(frozen=True)
class LossBreakdown:
    kd: float
    denoise: float
    contrast_inst: float
    contrast_ts: float
    total: float
    grad_student: np.ndarray = field(repr=False)
    hyper: DcrdHyper = field(repr=False)

    def as_dict(self):
        return {
            "kd": self.kd,
            "denoise": self.denoise,
            "c1": self.contrast_inst,
            "c2": self.contrast_ts,
            "total": self.total,
        }


def combine(kd, denoise, c1, c2, lambda1, lambda2):
    """The weighted sum used for both values and gradients (one fixed evaluation order)."""
    return kd + lambda1 * denoise + lambda2 * (c1 + c2)


# --------------------------------------------------------------------------- KD


def kd_loss(batch, tau=4.0, tau_squared=True):
    """Row-mean forward KL(softmax(t/tau) || softmax(s/tau)), times tau**2 when ``tau_squared``."""
    if not tau > 0:
        raise ContractViolation(f"temperature must be positive, got {tau}")
    T, S = batch.teacher, batch.student
    m = T.shape[0]
    log_pt = log_softmax(T / tau, axis=1)
    log_ps = log_softmax(S / tau, axis=1)
    pt = np.exp(log_pt)
    scale = tau * tau if tau_squared else 1.0
    loss = scale * float((pt * (log_pt - log_ps)).sum()) / m
    grad = (scale / (tau * m)) * (np.exp(log_ps) - pt)
    return loss, grad


# ---------------------------------------------------------------------- denoise


@dataclass(frozen=True)
class GramEmbedding:
    centered: np.ndarray
    gram: np.ndarray
    eig: object
    Z: np.ndarray


def default_embed_dim(m, C):
    return max(1, min(m - 1, C))


def gram_embed(F, d):
    """Classical-MDS embedding of the rows of ``F`` from its centred Gram matrix."""
    F = as_matrix(F, "features")
    m = F.shape[0]
    if not 1 <= d <= m:
        raise ContractViolation(f"embedding width must satisfy 1 <= d <= m={m}, got {d}")
    Fc = F - F.mean(axis=0)
    G = Fc @ Fc.T
    G = 0.5 * (G + G.T)
    eig = sym_eig(G)
    lam = np.maximum(eig.values[:d], 0.0)
    Z = eig.vectors[:, :d] * np.sqrt(lam)
    return GramEmbedding(Fc, G, eig, Z)


def pairwise_sq_dist_sum(F):
    """Sum over all ordered pairs of squared distances between rows (direct, O(m^2))."""
    F = np.asarray(F, dtype=np.float64)
    diff = F[:, None, :] - F[None, :, :]
    return float((diff * diff).sum())


def align_signs(Zs, Zt):
    """Column signs (+1/-1) that give each student column non-negative correlation with the teacher's."""
    corr = (Zs * Zt).sum(axis=0)
    return np.where(corr < 0, -1.0, 1.0)


def denoise_loss(batch, d=None, delta=1.0, eps=1e-8):
    """Huber loss between teacher and student MDS embeddings, gradient through the eigensolver."""
    T, S = batch.teacher, batch.student
    m, C = S.shape
    if d is None:
        d = default_embed_dim(m, C)
    Zt = gram_embed(T, d).Z
    emb = gram_embed(S, d)
    lam = emb.eig.values
    V = emb.eig.vectors
    lam_c = np.maximum(lam[:d], 0.0)
    root = np.sqrt(lam_c)
    signs = align_signs(emb.Z, Zt)
    loss, gZ = huber(Zt, emb.Z * signs, delta)
    gZs = gZ * signs

    grad_vecs = np.zeros_like(V)
    grad_vecs[:, :d] = gZs * root
    grad_vals = np.zeros_like(lam)
    pos = lam_c > 0
    grad_vals[:d][pos] = (gZs * V[:, :d]).sum(axis=0)[pos] / (2.0 * root[pos])
    gG = sym_eig_backward(emb.eig, grad_vals, grad_vecs, eps)
    gFc = 2.0 * gG @ emb.centered
    return loss, gFc - gFc.mean(axis=0)


def spectral_gap(F, d=None):
    """Smallest gap among the top ``d + 1`` eigenvalues of the centred Gram of ``F``.

    Finite differences of :func:`denoise_loss` are only meaningful when this
    is comfortably positive.
    """
    F = as_matrix(F, "features")
    m, C = F.shape
    if d is None:
        d = default_embed_dim(m, C)
    lam = np.maximum(gram_embed(F, min(d, m)).eig.values, 0.0)
    top = lam[: min(d + 1, m)]
    if top.size < 2:
        return np.inf
    return float(np.min(top[:-1] - top[1:]))


# ------------------------------------------------------------------ contrastive


def _project(gU, U, norms):
    # gradient through u = s / |s|
    return (gU - U * (gU * U).sum(axis=1, keepdims=True)) / norms[:, None]


def instance_discrimination_loss(batch, tau1=0.5):
    """Augmentation-consistency loss over the 2N student rows; anchors are the N originals."""
    if batch.layout != "paired":
        raise ContractViolation("instance discrimination needs a paired batch")
    if not tau1 > 0:
        raise ContractViolation(f"tau1 must be positive, got {tau1}")
    U, norms = row_normalize(batch.student)
    N = batch.n_pairs
    logits = (U[:N] @ U.T) / tau1
    logits[np.arange(N), np.arange(N)] = -np.inf
    log_p = log_softmax(logits, axis=1)
    pos = np.arange(N) + N
    loss = -float(log_p[np.arange(N), pos].mean())
    W = np.zeros((2 * N, 2 * N))
    W[:N] = np.exp(log_p)
    W[np.arange(N), pos] -= 1.0
    W /= N * tau1
    gU = W @ U + W.T @ U
    return loss, _project(gU, U, norms)


def ts_consistency_loss(batch, tau2=0.5):
    """Teacher-anchored contrastive loss over the 4N pool of teacher and student rows."""
    if batch.layout != "paired":
        raise ContractViolation("teacher-student consistency needs a paired batch")
    if not tau2 > 0:
        raise ContractViolation(f"tau2 must be positive, got {tau2}")
    UT, _ = row_normalize(batch.teacher)
    US, norms = row_normalize(batch.student)
    m = UT.shape[0]
    E = np.vstack([UT, US])
    logits = (UT @ E.T) / tau2
    logits[np.arange(m), np.arange(m)] = -np.inf
    log_p = log_softmax(logits, axis=1)
    loss = -float(log_p[np.arange(m), m + np.arange(m)].mean())
    Ws = np.exp(log_p[:, m:])
    Ws[np.arange(m), np.arange(m)] -= 1.0
    Ws /= m * tau2
    return loss, _project(Ws.T @ UT, US, norms)


# ------------------------------------------------------------------------ total


def total_loss(batch, hyper=None):
    """Evaluate all four terms on one paired batch and combine them."""
    hyper = hyper or DcrdHyper()
    kd, g_kd = kd_loss(batch, hyper.tau, hyper.kd_tau_squared)
    den, g_den = denoise_loss(batch, hyper.embed_dim, hyper.delta, hyper.eig_eps)
    c1, g_c1 = instance_discrimination_loss(batch, hyper.tau1)
    c2, g_c2 = ts_consistency_loss(batch, hyper.tau2)
    total = combine(kd, den, c1, c2, hyper.lambda1, hyper.lambda2)
    grad = g_kd
    # zero-weight terms stay out of the gradient entirely so a KD-only run is bit-identical
    if hyper.lambda1 != 0:
        grad = grad + hyper.lambda1 * g_den
    if hyper.lambda2 != 0:
        grad = grad + hyper.lambda2 * (g_c1 + g_c2)
    return LossBreakdown(kd, den, c1, c2, total, grad, hyper)
