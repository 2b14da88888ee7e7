"""Adaptive prototype sampling: rank an unlabeled pool by the teacher's view of it.

Three per-item scores are combined into ``s_total = sc - so + sd``:

* ``sc`` confidence, the max softmax probability normalised by the pool maximum;
* ``so`` the summed cosine similarity of an item's logits to the k-means
  prototypes of its predicted class, normalised the same way;
* ``sd`` class density, ``sqrt(u_c) / ln(n_c + C)`` broadcast to the items of
  class ``c`` where ``u_c`` is the class mean of the raw similarity sums.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import io
import os

import numpy as np

from .errors import ConfigError, ContractViolation, FormatError, RequestTooLarge
from .numerics import as_matrix, cosine_matrix, kmeans, softmax

OUTLIER_SIGNS = ("as-printed", "negated")
METHODS = ("aps", "random")  # "random" is the uniform baseline sampler
CSV_HEADER = "id,class,confidence,raw_outlier,sc,so,sd,s_total"


@dataclass(frozen=True)
class PredictionSet:
    logits: np.ndarray
    pool_ids: tuple

    def __post_init__(self):
        L = as_matrix(self.logits, "logits")
        if L.shape[0] < 1 or L.shape[1] < 2:
            raise ContractViolation(f"PredictionSet needs s >= 1 rows and C >= 2 classes, got {L.shape}")
        ids = tuple(self.pool_ids)
        if len(ids) != L.shape[0]:
            raise ContractViolation(f"{len(ids)} pool ids for {L.shape[0]} logit rows")
        if len(set(ids)) != len(ids):
            raise ContractViolation("pool ids must be unique")
        object.__setattr__(self, "logits", L)
        object.__setattr__(self, "pool_ids", ids)

    @classmethod
    def from_logits(cls, logits, pool_ids=None):
        logits = np.asarray(logits, dtype=np.float64)
        if pool_ids is None:
            pool_ids = range(logits.shape[0])
        return cls(logits, tuple(pool_ids))

    @property
    def n_classes(self):
        return self.logits.shape[1]

    def __len__(self):
        return self.logits.shape[0]


@dataclass(frozen=True)
class PrototypeBank:
    prototypes: tuple  # per class: (effective_k[c], C) array, (0, C) when the class is empty
    effective_k: np.ndarray
    seed: int


@dataclass(frozen=True)
class ScoreTable:
    ids: tuple
    predicted_class: np.ndarray
    confidence: np.ndarray
    raw_outlier: np.ndarray
    sc: np.ndarray
    so: np.ndarray
    sd: np.ndarray
    s_total: np.ndarray
    class_counts: np.ndarray
    class_mean_outlier: np.ndarray
    class_density: np.ndarray

    def __len__(self):
        return len(self.ids)


def _normalize_by_max(x):
    # normaliser is the largest magnitude; equals |max x| whenever that entry is positive
    m = np.abs(x).max() if x.size else 0.0
    if m == 0.0:
        return np.zeros_like(x)
    return x / m


def confidence_scores(preds):
    """Return ``(p_tilde, sc, predicted_class)`` for every pool item."""
    probs = softmax(preds.logits, axis=1)
    cls = np.argmax(probs, axis=1)
    p_tilde = probs[np.arange(len(cls)), cls]
    return p_tilde, _normalize_by_max(p_tilde), cls


def _cluster_class(rows, k, seed):
    # sort rows first so the prototypes do not depend on storage order
    order = np.lexsort(rows.T[::-1])
    return kmeans(rows[order], k, rng_seed=seed).centers


def build_prototypes(preds, k=5, seed=0, workers=None):
    """Cluster each predicted class's logit rows into ``min(k, n_c)`` prototypes."""
    if k < 1:
        raise ContractViolation(f"prototype count must be >= 1, got {k}")
    C = preds.n_classes
    cls = np.argmax(preds.logits, axis=1)
    jobs = []
    for c in range(C):
        rows = preds.logits[cls == c]
        jobs.append((rows, min(k, rows.shape[0]), [seed, c]))

    def run(job):
        rows, kc, s = job
        if kc == 0:
            return np.zeros((0, C))
        return _cluster_class(rows, kc, s)

    if workers is None:
        workers = default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            protos = list(ex.map(run, jobs))
    else:
        protos = [run(j) for j in jobs]
    eff = np.array([p.shape[0] for p in protos], dtype=np.int64)
    return PrototypeBank(tuple(protos), eff, seed)


def outlier_scores(preds, bank):
    """Return ``(o_tilde, so)``: summed cosine to own-class prototypes and its normalised score."""
    L = preds.logits
    cls = np.argmax(L, axis=1)
    o = np.zeros(L.shape[0])
    for c, protos in enumerate(bank.prototypes):
        members = np.flatnonzero(cls == c)
        if members.size == 0:
            continue
        if protos.shape[0] == 0:
            raise ContractViolation(f"prototype bank has no prototypes for populated class {c}")
        o[members] = cosine_matrix(L[members], protos).sum(axis=1)
    return o, _normalize_by_max(o)


def density_scores(o_tilde, predicted_class, C):
    """Return ``(u, D, sd)``: per-class mean similarity, class density, per-item density score."""
    o_tilde = np.asarray(o_tilde, dtype=np.float64)
    cls = np.asarray(predicted_class, dtype=np.int64)
    if C < 2:
        raise ContractViolation(f"density_scores needs C >= 2, got {C}")
    n = np.bincount(cls, minlength=C)
    sums = np.bincount(cls, weights=o_tilde, minlength=C)
    u = np.divide(sums, n, out=np.zeros(C), where=n > 0)
    # negative class means would make the square root complex; they get density 0
    D = np.sqrt(np.maximum(u, 0.0)) / np.log(n + C)
    sd = _normalize_by_max(D)[cls]
    return u, D, sd


def score_pool(preds, k=5, seed=0, outlier_sign="as-printed", workers=None):
    """Compute the full :class:`ScoreTable` for a pool."""
    if outlier_sign not in OUTLIER_SIGNS:
        raise ConfigError(f"outlier_sign must be one of {OUTLIER_SIGNS}, got {outlier_sign!r}")
    p_tilde, sc, cls = confidence_scores(preds)
    bank = build_prototypes(preds, k=k, seed=seed, workers=workers)
    o, so = outlier_scores(preds, bank)
    u, D, sd = density_scores(o, cls, preds.n_classes)
    if outlier_sign == "as-printed":
        total = sc - so + sd
    else:
        total = sc + so + sd
    n_c = np.bincount(cls, minlength=preds.n_classes)
    return ScoreTable(preds.pool_ids, cls, p_tilde, o, sc, so, sd, total, n_c, u, D)


def select_top(s_total, n):
    """Indices of the ``n`` highest totals, ties to the lower index, in rank order."""
    s_total = np.asarray(s_total, dtype=np.float64)
    if n > s_total.size:
        raise RequestTooLarge(f"requested {n} items from a pool of {s_total.size}")
    if n < 0:
        raise ContractViolation(f"selection size must be non-negative, got {n}")
    order = np.lexsort((np.arange(s_total.size), -s_total))
    return order[:n]


def total_scores_and_select(table, n):
    return [int(i) for i in select_top(table.s_total, n)]


def random_select(n_items, n, seed=0):
    """Uniform baseline: ``n`` distinct indices drawn with a seeded permutation."""
    if n > n_items:
        raise RequestTooLarge(f"requested {n} items from a pool of {n_items}")
    return np.random.default_rng([seed, 0xA95]).permutation(n_items)[:n]


def default_workers():
    try:
        return max(1, int(os.environ.get("ODSD_THREADS", "1")))
    except ValueError:
        raise ConfigError("ODSD_THREADS must be a positive integer") from None


# -------------------------------------------------------------------- file I/O


def _f(x):
    return repr(float(x))


def score_table_csv(table):
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for i in range(len(table)):
        out.write(",".join([
            str(table.ids[i]), str(int(table.predicted_class[i])), _f(table.confidence[i]),
            _f(table.raw_outlier[i]), _f(table.sc[i]), _f(table.so[i]), _f(table.sd[i]),
            _f(table.s_total[i]),
        ]) + "\n")
    return out.getvalue()


def write_score_table(table, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(score_table_csv(table))


def read_score_table(path):
    """Read back the per-item columns of a score CSV as a dict of arrays (ids stay strings)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise FormatError(f"{path}: unexpected header {header!r}", offset=0)
        ids, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 8:
                raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            ids.append(parts[0])
            rows.append([float(p) for p in parts[1:]])
    arr = np.array(rows, dtype=np.float64).reshape(-1, 7)
    cols = CSV_HEADER.split(",")[1:]
    out = {name: arr[:, j] for j, name in enumerate(cols)}
    out["class"] = out["class"].astype(np.int64)
    out["id"] = ids
    return out


def write_selection(ids, path):
    with open(path, "w", newline="\n") as fh:
        for i in ids:
            fh.write(f"{i}\n")


def read_selection(path):
    with open(path) as fh:
        return [line.strip() for line in fh if line.strip()]
