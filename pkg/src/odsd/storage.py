"""On-disk layout of datasets and model checkpoints (directories of ODST tensors).

A dataset directory holds ``features.odst`` plus optional ``labels.odst``,
``provenance.odst`` (0 = in-dist, 1 = ood) and ``ids.txt``.  A checkpoint
directory holds ``manifest.json`` and one tensor per parameter, ``w{i}`` /
``b{i}``, with optimizer velocities ``vw{i}`` / ``vb{i}`` when saved mid-run.
"""
import json
import os
import shutil

import numpy as np

from .errors import FormatError
from .nets import LabeledDataset, MlpModel, SgdState, UnlabeledPool
from .tensor_io import read_tensor, write_tensor

CHECKPOINT_FORMAT = "odsd-checkpoint"
CHECKPOINT_VERSION = 1


def _dump_json(obj, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- datasets


def save_dataset(path, data):
    os.makedirs(path, exist_ok=True)
    write_tensor(os.path.join(path, "features.odst"), data.features)
    if isinstance(data, LabeledDataset):
        write_tensor(os.path.join(path, "labels.odst"), data.labels)
    else:
        write_tensor(os.path.join(path, "provenance.odst"), data.provenance)
        with open(os.path.join(path, "ids.txt"), "w", newline="\n") as fh:
            fh.writelines(f"{i}\n" for i in data.ids)


def _features(path):
    for name in ("features.odst", "features.csv"):
        f = os.path.join(path, name)
        if os.path.exists(f):
            return read_tensor(f)
    raise FileNotFoundError(f"no features.odst in dataset directory {path!r}")


def _labels(path, n):
    f = os.path.join(path, "labels.odst")
    if not os.path.exists(f):
        raise FileNotFoundError(f"dataset {path!r} has no labels.odst")
    y = read_tensor(f).reshape(-1)
    if y.size != n or np.any(y != np.round(y)) or np.any(y < 0):
        raise FormatError(f"{f}: labels must be {n} non-negative integers")
    return y.astype(np.int64)


def load_labeled(path):
    X = _features(path)
    return LabeledDataset(X, _labels(path, len(X)))


def load_pool(path):
    """Load an unlabeled pool; provenance defaults to all in-dist and ids to row numbers."""
    X = _features(path)
    prov_f = os.path.join(path, "provenance.odst")
    prov = read_tensor(prov_f).reshape(-1).astype(np.int64) if os.path.exists(prov_f) else np.zeros(len(X), np.int64)
    ids_f = os.path.join(path, "ids.txt")
    if os.path.exists(ids_f):
        with open(ids_f) as fh:
            ids = tuple(line.strip() for line in fh if line.strip())
    else:
        ids = tuple(str(i) for i in range(len(X)))
    return UnlabeledPool(X, prov, tuple(str(i) for i in ids))


def has_provenance(path):
    return os.path.exists(os.path.join(path, "provenance.odst"))


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(path, model, kind, state=None, **extra):
    """Write ``model`` (and optionally SGD velocities) atomically to directory ``path``."""
    tmp = path.rstrip("/\\") + ".tmp"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        write_tensor(os.path.join(tmp, f"w{i}.odst"), W)
        write_tensor(os.path.join(tmp, f"b{i}.odst"), b)
    if state is not None:
        for i in range(len(model.weights)):
            write_tensor(os.path.join(tmp, f"vw{i}.odst"), state.velocity[2 * i])
            write_tensor(os.path.join(tmp, f"vb{i}.odst"), state.velocity[2 * i + 1])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "layer_sizes": list(model.sizes),
        "init_seed": int(model.seed),
        "has_velocity": state is not None,
    }
    manifest.update(extra)
    _dump_json(manifest, os.path.join(tmp, "manifest.json"))
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(tmp, path)


def load_checkpoint(path, with_state=False, sgd=None):
    """Return ``(model, manifest)`` or ``(model, manifest, state)`` when ``with_state``."""
    mf = os.path.join(path, "manifest.json")
    if not os.path.exists(mf):
        raise FileNotFoundError(f"no checkpoint manifest at {mf!r}")
    with open(mf) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{mf}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} manifest")
    sizes = tuple(manifest["layer_sizes"])
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        W = read_tensor(os.path.join(path, f"w{i}.odst"))
        b = read_tensor(os.path.join(path, f"b{i}.odst"))
        if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise FormatError(f"{path}: layer {i} has shapes {W.shape}/{b.shape}, manifest says {(fan_in, fan_out)}")
        weights.append(W)
        biases.append(b)
    model = MlpModel(sizes, weights, biases, manifest["init_seed"])
    if not with_state:
        return model, manifest
    if not manifest.get("has_velocity"):
        raise FormatError(f"{path}: checkpoint carries no optimizer state to resume from")
    lr, momentum, wd = sgd if sgd is not None else (0.025, 0.9, 5e-4)
    vel = []
    for i in range(len(weights)):
        vel += [read_tensor(os.path.join(path, f"vw{i}.odst")), read_tensor(os.path.join(path, f"vb{i}.odst"))]
    return model, manifest, SgdState(lr, momentum, wd, vel)
