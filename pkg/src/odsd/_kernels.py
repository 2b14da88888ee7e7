"""Hot inner loops, each with a numba body and a vectorised numpy twin.

The public wrappers in :mod:`odsd.numerics` call ``eigh_raw``, ``lloyd`` and
``hartigan``; which implementation they get is decided once at import time
by :data:`odsd._jit.JIT_ENABLED`.  Both variants are always importable so the
benchmark and the cross-check tests can compare them side by side.

The Jacobi eigensolver loses to LAPACK at every batch size we use (see
``benchmarks/bench_kernels.py``), so ``eigh_raw`` is LAPACK in both modes and
Jacobi serves as an independent reference in the tests.
"""
import numpy as np

from ._jit import JIT_ENABLED, njit

JACOBI_MAX_SWEEPS = 60
LLOYD_MAX_ITER = 300


@njit
def _jacobi_eigh(a):
    # cyclic Jacobi; returns unsorted eigenvalues and eigenvector columns
    n = a.shape[0]
    A = a.copy()
    V = np.eye(n)
    eps = 2.220446049250313e-16
    for _ in range(JACOBI_MAX_SWEEPS):
        off = 0.0
        total = 0.0
        for i in range(n):
            total += A[i, i] * A[i, i]
            for j in range(i + 1, n):
                off += A[i, j] * A[i, j]
        total += 2.0 * off
        if off <= eps * eps * total or off == 0.0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                g = 100.0 * abs(apq)
                if abs(app) + g == abs(app) and abs(aqq) + g == abs(aqq):
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    continue
                theta = (aqq - app) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    akp = A[k, p]
                    akq = A[k, q]
                    nkp = c * akp - s * akq
                    nkq = s * akp + c * akq
                    A[k, p] = nkp
                    A[p, k] = nkp
                    A[k, q] = nkq
                    A[q, k] = nkq
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = A[i, i]
    return w, V


def _numpy_eigh(a):
    return np.linalg.eigh(a)


@njit
def _lloyd_jit(X, centers):
    n, d = X.shape
    k = centers.shape[0]
    C = centers.copy()
    labels = np.full(n, -1, dtype=np.int64)
    dist = np.empty(n)
    counts = np.zeros(k, dtype=np.int64)
    n_iter = 0
    for it in range(LLOYD_MAX_ITER):
        changed = False
        for i in range(n):
            best = 0
            bestd = np.inf
            for j in range(k):
                s = 0.0
                for f in range(d):
                    r = X[i, f] - C[j, f]
                    s += r * r
                if s < bestd:
                    bestd = s
                    best = j
            dist[i] = bestd
            if labels[i] != best:
                changed = True
                labels[i] = best
        n_iter = it + 1
        if not changed:
            break
        counts[:] = 0
        for i in range(n):
            counts[labels[i]] += 1
        # empty clusters claim the point farthest from its own center
        for j in range(k):
            if counts[j] == 0:
                far = -1
                fard = -1.0
                for i in range(n):
                    if counts[labels[i]] > 1 and dist[i] > fard:
                        fard = dist[i]
                        far = i
                counts[labels[far]] -= 1
                labels[far] = j
                counts[j] = 1
                dist[far] = 0.0
        C[:, :] = 0.0
        for i in range(n):
            for f in range(d):
                C[labels[i], f] += X[i, f]
        for j in range(k):
            for f in range(d):
                C[j, f] /= counts[j]
    return C, labels, n_iter


def _lloyd_numpy(X, centers):
    n = X.shape[0]
    k = centers.shape[0]
    C = centers.copy()
    labels = np.full(n, -1, dtype=np.int64)
    n_iter = 0
    for it in range(LLOYD_MAX_ITER):
        d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        dist = d2[np.arange(n), new]
        n_iter = it + 1
        if np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j] == 0:
                cand = np.where(counts[labels] > 1, dist, -1.0)
                far = int(np.argmax(cand))
                counts[labels[far]] -= 1
                labels[far] = j
                counts[j] = 1
                dist[far] = 0.0
        C = np.zeros_like(C)
        np.add.at(C, labels, X)
        C /= counts[:, None]
    return C, labels, n_iter


@njit
def _hartigan_jit(X, labels, max_passes):
    # single-point moves: x leaves a for b when n_b/(n_b+1)|x-c_b|^2 < n_a/(n_a-1)|x-c_a|^2
    n, d = X.shape
    k = 0
    for i in range(n):
        if labels[i] + 1 > k:
            k = labels[i] + 1
    lab = labels.copy()
    counts = np.zeros(k, dtype=np.int64)
    C = np.zeros((k, d))
    for i in range(n):
        counts[lab[i]] += 1
        for f in range(d):
            C[lab[i], f] += X[i, f]
    for j in range(k):
        for f in range(d):
            C[j, f] /= counts[j]
    for _ in range(max_passes):
        moved = False
        for i in range(n):
            a = lab[i]
            if counts[a] == 1:
                continue
            da = 0.0
            for f in range(d):
                r = X[i, f] - C[a, f]
                da += r * r
            cost_a = da * counts[a] / (counts[a] - 1)
            best = a
            best_cost = cost_a
            for b in range(k):
                if b == a:
                    continue
                db = 0.0
                for f in range(d):
                    r = X[i, f] - C[b, f]
                    db += r * r
                cb = db * counts[b] / (counts[b] + 1)
                if cb < best_cost:
                    best_cost = cb
                    best = b
            if best != a and best_cost < cost_a * (1.0 - 1e-12):
                na = counts[a]
                nb = counts[best]
                for f in range(d):
                    C[a, f] = (na * C[a, f] - X[i, f]) / (na - 1)
                    C[best, f] = (nb * C[best, f] + X[i, f]) / (nb + 1)
                counts[a] = na - 1
                counts[best] = nb + 1
                lab[i] = best
                moved = True
        if not moved:
            break
    return lab


def _hartigan_numpy(X, labels, max_passes):
    lab = labels.copy()
    k = int(lab.max()) + 1
    counts = np.bincount(lab, minlength=k).astype(np.float64)
    C = np.zeros((k, X.shape[1]))
    np.add.at(C, lab, X)
    C /= counts[:, None]
    for _ in range(max_passes):
        moved = False
        for i in range(X.shape[0]):
            a = lab[i]
            if counts[a] == 1:
                continue
            d2 = ((X[i] - C) ** 2).sum(axis=1)
            cost = d2 * counts / (counts + 1)
            cost[a] = d2[a] * counts[a] / (counts[a] - 1)
            cost_a = cost[a]
            cost[a] = np.inf
            b = int(np.argmin(cost))
            if cost[b] < cost_a and cost[b] < cost_a * (1.0 - 1e-12):
                na, nb = counts[a], counts[b]
                C[a] = (na * C[a] - X[i]) / (na - 1)
                C[b] = (nb * C[b] + X[i]) / (nb + 1)
                counts[a] -= 1
                counts[b] += 1
                lab[i] = b
                moved = True
        if not moved:
            break
    return lab


def jacobi_eigh(a):
    """Cyclic Jacobi (compiled when numba is on); unsorted ``(w, V)``."""
    return _jacobi_eigh(np.ascontiguousarray(a, dtype=np.float64))


eigh_raw = _numpy_eigh
if JIT_ENABLED:
    lloyd = _lloyd_jit
    hartigan = _hartigan_jit
else:
    lloyd = _lloyd_numpy
    hartigan = _hartigan_numpy
