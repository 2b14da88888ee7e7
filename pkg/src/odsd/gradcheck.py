"""Central finite-difference checks for every analytic gradient in the package.

Relative error of an analytic gradient ``g`` against the numerical ``fd`` is
``max|g - fd| / max(max|fd|, 1e-8)``: one number per term, insensitive to
individual near-zero entries.
"""
from dataclasses import dataclass

import numpy as np

from .dcrd import (BatchOutputs, DcrdHyper, denoise_loss, instance_discrimination_loss, kd_loss,
                   spectral_gap, ts_consistency_loss)
from .nets import MlpModel, mlp_backward, mlp_forward

TERMS = ("kd", "denoise", "c1", "c2", "mlp")
GAP_MIN = 1e-3


@dataclass(frozen=True)
class TermReport:
    name: str
    status: str  # pass | fail | skipped
    rel_error: float | None
    note: str = ""

    def line(self):
        if self.status == "skipped":
            return f"{self.name:8s} skipped ({self.note})"
        return f"{self.name:8s} {self.status:4s} max rel err {self.rel_error:.3e}"


def central_diff(f, x, step=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (``x`` is restored afterwards)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * step)
    return g


def rel_error(g, fd):
    return float(np.max(np.abs(g - fd)) / max(float(np.max(np.abs(fd))), 1e-8))


def random_batch(seed=0, n_pairs=4, classes=4):
    rng = np.random.default_rng([seed, 0x6C])
    m = 2 * n_pairs
    T = 2.0 * rng.standard_normal((m, classes))
    S = 2.0 * rng.standard_normal((m, classes))
    return BatchOutputs(T, S, "paired")


def degenerate_batch(seed=0, n_pairs=4, classes=4):
    """Student rows ``+-e_j`` so the centred Gram has a repeated top eigenvalue."""
    base = random_batch(seed, n_pairs, classes)
    m = 2 * n_pairs
    S = np.zeros((m, classes))
    for r in range(m):
        S[r, r % classes] = 1.0 if (r // classes) % 2 == 0 else -1.0
    return base.with_student(S)


def _loss_fns(hyper):
    return {
        "kd": lambda b: kd_loss(b, hyper.tau, hyper.kd_tau_squared),
        "denoise": lambda b: denoise_loss(b, hyper.embed_dim, hyper.delta, hyper.eig_eps),
        "c1": lambda b: instance_discrimination_loss(b, hyper.tau1),
        "c2": lambda b: ts_consistency_loss(b, hyper.tau2),
    }


def check_loss(name, batch, hyper=None, step=1e-5, tol=1e-4, corrupt=False):
    hyper = hyper or DcrdHyper()
    fn = _loss_fns(hyper)[name]
    if name == "denoise":
        gap = spectral_gap(batch.student, hyper.embed_dim)
        if gap < GAP_MIN:
            return TermReport(name, "skipped", None, f"gap < {GAP_MIN:g}")
    S = batch.student.copy()
    _, g = fn(batch.with_student(S))
    if corrupt:
        g = g * 1.1 + 1e-3
    fd = central_diff(lambda: fn(batch.with_student(S))[0], S, step)
    err = rel_error(g, fd)
    return TermReport(name, "pass" if err <= tol else "fail", err)


def check_mlp(seed=0, classes=4, step=1e-5, tol=1e-4, corrupt=False, sizes=(5, 7, 6)):
    """Backward pass of a small ReLU MLP under the scalar ``sum(G * logits)``."""
    rng = np.random.default_rng([seed, 0x31])
    model = MlpModel.init(tuple(sizes) + (classes,), seed)
    X = rng.standard_normal((8, sizes[0]))
    G = rng.standard_normal((8, classes))
    out, cache = mlp_forward(model, X)
    grads = mlp_backward(model, cache, G)
    worst = 0.0
    for p, g in zip(model.params(), grads):
        if corrupt:
            g = g * 1.1 + 1e-3
        fd = central_diff(lambda: float((mlp_forward(model, X)[0] * G).sum()), p, step)
        worst = max(worst, rel_error(g, fd))
    return TermReport("mlp", "pass" if worst <= tol else "fail", worst)


def run_gradcheck(seed=0, n_pairs=4, classes=4, step=1e-5, tol=1e-4, corrupt=(), degenerate=False, hyper=None):
    """Check every term; ``corrupt`` names terms whose analytic gradient is deliberately perturbed."""
    make = degenerate_batch if degenerate else random_batch
    batch = make(seed, n_pairs, classes)
    reports = [check_loss(name, batch, hyper, step, tol, name in corrupt) for name in ("kd", "denoise", "c1", "c2")]
    reports.append(check_mlp(seed, classes, step, tol, "mlp" in corrupt))
    return reports


def all_passed(reports):
    return all(r.status != "fail" for r in reports)
