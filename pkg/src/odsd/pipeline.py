"""Subcommand bodies: synth -> train-teacher -> score -> sample -> distill -> eval, plus embed.

Each ``cmd_*`` takes an :class:`~odsd.config.ExperimentConfig`, writes its
artifacts under the configured paths, prints a short human summary through
``echo`` and returns a dict of the headline numbers.  Artifact locations
default to ``paths.out``::

    data/{train,test,pool}/   teacher/   student/
    scores.csv   selection.txt   metrics.jsonl   teacher_metrics.jsonl   embed.csv
"""
import json
import os
import time

import numpy as np

from . import aps
from .dcrd import gram_embed
from .distill import distill
from .errors import ConfigError, ContractViolation
from .gradcheck import all_passed, run_gradcheck
from .nets import (SYNTH_PRESETS, MlpModel, accuracy, predict, synth_openworld, train_classifier)
from .storage import (has_provenance, load_checkpoint, load_labeled, load_pool, save_checkpoint, save_dataset)
from .tensor_io import write_csv, write_tensor


def _out(cfg, name):
    out = cfg.path("paths.out")
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _paths(cfg):
    return {
        "train": cfg.path("paths.train", os.path.join("data", "train")),
        "test": cfg.path("paths.test", os.path.join("data", "test")),
        "pool": cfg.path("paths.pool", os.path.join("data", "pool")),
        "teacher": cfg.path("paths.teacher", "teacher"),
        "student": cfg.path("paths.student", "student"),
    }


def _json_line(record):
    return json.dumps(record, sort_keys=True, allow_nan=False) + "\n"


def _read_jsonl(path):
    if not os.path.exists(path):
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _check_classes(cfg, C, what):
    want = cfg["model.classes"]
    if want and want != C:
        raise ConfigError(f"model.classes = {want} but the {what} has {C} classes")


# --------------------------------------------------------------------- synth


def cmd_synth(cfg, echo=print):
    """Generate the train/test/pool datasets of the configured synthetic preset."""
    spec = SYNTH_PRESETS[cfg["synth.preset"]](cfg["synth.dim"], cfg["synth.ood_fraction"])
    train, test, pool = synth_openworld(spec, cfg["synth.seed"])
    p = _paths(cfg)
    for key, data in (("train", train), ("test", test), ("pool", pool)):
        save_dataset(p[key], data)
    echo(f"synth {cfg['synth.preset']}: {len(train)} train, {len(test)} test, {len(pool)} pool "
         f"({pool.ood_fraction:.3f} ood), {spec.n_classes} classes, dim {spec.dim}")
    return {"n_train": len(train), "n_test": len(test), "n_pool": len(pool), "pool_ood_fraction": pool.ood_fraction}


# ------------------------------------------------------------------- teacher


def cmd_train_teacher(cfg, echo=print):
    p = _paths(cfg)
    train = load_labeled(p["train"])
    test = load_labeled(p["test"]) if os.path.exists(p["test"]) else None
    C = cfg["model.classes"] or int(train.labels.max()) + 1
    if train.labels.max() >= C:
        raise ConfigError(f"train labels reach {int(train.labels.max())} but model.classes = {C}")
    tc = cfg.teacher_train()
    model = MlpModel.init((train.features.shape[1],) + cfg["model.teacher_hidden"] + (C,), tc.seed)
    run_id = cfg.run_id()
    metrics_path = _out(cfg, "teacher_metrics.jsonl")
    wall = cfg["train.record_wall_time"]
    t0 = time.perf_counter()
    with open(metrics_path, "w", newline="\n") as fh:
        def log(epoch, loss):
            rec = {"run_id": run_id, "seed": tc.seed, "epoch": epoch, "loss": loss,
                   "test_accuracy": accuracy(model, test) if test is not None else None,
                   "wall_time": time.perf_counter() - t0 if wall else None}
            fh.write(_json_line(rec))

        train_classifier(model, train, tc.epochs, tc.batch, tc.lr, tc.momentum, tc.weight_decay,
                         tc.seed, tc.schedule, on_epoch=log)
    save_checkpoint(p["teacher"], model, "teacher", run_id=run_id, epochs_completed=tc.epochs)
    acc = accuracy(model, test) if test is not None else None
    echo(f"teacher {model.sizes} trained {tc.epochs} epochs"
         + (f"; test accuracy {acc:.4f}" if acc is not None else ""))
    return {"test_accuracy": acc, "checkpoint": p["teacher"], "sizes": model.sizes}


# --------------------------------------------------------------------- score


def _teacher_and_pool(cfg):
    p = _paths(cfg)
    teacher, _ = load_checkpoint(p["teacher"])
    _check_classes(cfg, teacher.n_classes, "teacher checkpoint")
    pool = load_pool(p["pool"])
    if pool.features.shape[1] != teacher.sizes[0]:
        raise ConfigError(f"pool features have width {pool.features.shape[1]}, teacher expects {teacher.sizes[0]}")
    return teacher, pool, has_provenance(p["pool"])


def cmd_score(cfg, echo=print):
    teacher, pool, tagged = _teacher_and_pool(cfg)
    preds = aps.PredictionSet.from_logits(predict(teacher, pool.features), pool.ids)
    table = aps.score_pool(preds, cfg["aps.k"], cfg["aps.seed"], cfg["aps.outlier_sign"], aps.default_workers())
    path = _out(cfg, "scores.csv")
    aps.write_score_table(table, path)
    echo(f"scored {len(table)} pool items -> {path}")
    echo("class      n_c        u_c        D_c")
    for c in range(preds.n_classes):
        echo(f"{c:5d} {int(table.class_counts[c]):8d} {table.class_mean_outlier[c]:10.4f} {table.class_density[c]:10.4f}")
    summary = {"n": len(table), "mean_sc": float(table.sc.mean()), "class_counts": table.class_counts.tolist(),
               "class_density": table.class_density.tolist()}
    echo(f"mean sc {summary['mean_sc']:.4f}")
    if tagged:
        summary["pool_ood_fraction"] = pool.ood_fraction
        echo(f"pool ood fraction {pool.ood_fraction:.4f}")
    return summary


# -------------------------------------------------------------------- sample


def cmd_sample(cfg, echo=print):
    cols = aps.read_score_table(_out(cfg, "scores.csv"))
    n = cfg["aps.n_select"]
    if cfg["aps.method"] == "aps":
        idx = aps.select_top(cols["s_total"], n)
    else:
        idx = aps.random_select(len(cols["id"]), n, cfg["aps.seed"])
    ids = [cols["id"][i] for i in idx]
    path = _out(cfg, "selection.txt")
    aps.write_selection(ids, path)
    result = {"n_selected": len(ids), "method": cfg["aps.method"]}
    echo(f"selected {len(ids)} of {len(cols['id'])} items ({cfg['aps.method']}) -> {path}")
    pool_dir = _paths(cfg)["pool"]
    if os.path.exists(pool_dir) and has_provenance(pool_dir):
        pool = load_pool(pool_dir)
        row = {pid: r for r, pid in enumerate(pool.ids)}
        prov = pool.provenance[[row[i] for i in ids]]
        n_ood = int(prov.sum())
        result.update(selected_ood_fraction=n_ood / len(ids), pool_ood_fraction=pool.ood_fraction)
        echo(f"composition: {len(ids) - n_ood} in-dist, {n_ood} ood "
             f"(selected ood {n_ood / len(ids):.4f} vs pool {pool.ood_fraction:.4f})")
    return result


# ------------------------------------------------------------------- distill


def cmd_distill(cfg, echo=print, resume=False, stop_after=None):
    """Distil the student on the selection; ``stop_after`` ends after that many epochs in total."""
    p = _paths(cfg)
    teacher, pool, _ = _teacher_and_pool(cfg)
    test = load_labeled(p["test"]) if os.path.exists(p["test"]) else None
    row = {pid: r for r, pid in enumerate(pool.ids)}
    ids = aps.read_selection(_out(cfg, "selection.txt"))
    missing = [i for i in ids if i not in row]
    if missing:
        raise ConfigError(f"{len(missing)} selected ids are not in the pool (first: {missing[0]!r})")
    selected = np.array([row[i] for i in ids], dtype=np.int64)
    tc, hyper, aug = cfg.train(), cfg.hyper(), cfg.aug()
    run_id = cfg.run_id()
    metrics_path = _out(cfg, "metrics.jsonl")

    if resume:
        student, manifest, state = load_checkpoint(p["student"], with_state=True,
                                                   sgd=(tc.lr, tc.momentum, tc.weight_decay))
        if manifest.get("run_id") != run_id:
            raise ConfigError(f"checkpoint {p['student']} belongs to run {manifest.get('run_id')}, config is {run_id}")
        start = int(manifest["epochs_completed"])
        kept = [r for r in _read_jsonl(metrics_path) if r["epoch"] < start]
        with open(metrics_path, "w", newline="\n") as fh:
            fh.writelines(_json_line(r) for r in kept)
    else:
        student = MlpModel.init((teacher.sizes[0],) + cfg["model.student_hidden"] + (teacher.n_classes,), tc.seed)
        state, start = None, 0
        open(metrics_path, "w").close()
        save_checkpoint(p["student"], student, "student", None, run_id=run_id, epochs_completed=0)

    wall = cfg["train.record_wall_time"]
    t0 = time.perf_counter()

    def on_epoch(epoch, record, st):
        rec = dict(record, run_id=run_id, seed=tc.seed, wall_time=time.perf_counter() - t0 if wall else None)
        with open(metrics_path, "a", newline="\n") as fh:
            fh.write(_json_line(rec))
        save_checkpoint(p["student"], student, "student", st, run_id=run_id, epochs_completed=epoch + 1)
        echo(f"epoch {epoch:3d}  kd {record['kd']:.4f}  denoise {record['denoise']:.4f}  c1 {record['c1']:.4f}  "
             f"c2 {record['c2']:.4f}  total {record['total']:.4f}"
             + (f"  acc {record['test_accuracy']:.4f}" if record["test_accuracy"] is not None else ""))

    records = distill(teacher, student, pool.features, selected, hyper, tc, aug, test,
                      state=state, start_epoch=start, stop_epoch=stop_after, on_epoch=on_epoch)
    acc = accuracy(student, test) if test is not None else None
    if acc is not None:
        echo(f"student test accuracy {acc:.4f}")
    return {"test_accuracy": acc, "epochs_run": len(records), "records": records}


# ---------------------------------------------------------------------- eval


def cmd_eval(cfg, echo=print, checkpoint=None, data=None):
    p = _paths(cfg)
    model, _ = load_checkpoint(checkpoint or p["student"])
    ds = load_labeled(data or p["test"])
    if ds.features.shape[1] != model.sizes[0]:
        raise ContractViolation(f"data has width {ds.features.shape[1]}, model expects {model.sizes[0]}")
    if len(ds) and ds.labels.max() >= model.n_classes:
        raise ContractViolation(f"labels reach {int(ds.labels.max())} but the model has {model.n_classes} classes")
    acc = accuracy(model, ds)
    echo(f"{acc:.4f}")
    return {"accuracy": acc}


# ----------------------------------------------------------------- gradcheck


def cmd_gradcheck(cfg, echo=print, corrupt=(), degenerate=False):
    t0 = time.perf_counter()
    reports = run_gradcheck(cfg["gradcheck.seed"], cfg["gradcheck.n_pairs"], cfg["gradcheck.classes"],
                            cfg["gradcheck.step"], cfg["gradcheck.tol"], tuple(corrupt), degenerate, cfg.hyper())
    for r in reports:
        echo(r.line())
    ok = all_passed(reports)
    echo(f"gradcheck {'passed' if ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s")
    return {"passed": ok, "reports": reports}


# --------------------------------------------------------------------- embed


def cmd_embed(cfg, echo=print):
    """Teacher and student Gram embeddings of the first ``embed.batch`` rows of a dataset."""
    p = _paths(cfg)
    teacher, _ = load_checkpoint(p["teacher"])
    student, _ = load_checkpoint(p["student"])
    data = cfg.path("embed.data") or p["test"]
    X = load_labeled(data).features if os.path.exists(os.path.join(data, "labels.odst")) else load_pool(data).features
    X = X[: cfg["embed.batch"]]
    d = cfg["embed.d"]
    if d > len(X):
        raise ContractViolation(f"embed.d = {d} exceeds the batch of {len(X)} rows")
    Zt = gram_embed(teacher(X), d).Z
    Zs = gram_embed(student(X), d).Z
    header = [f"zt_{j}" for j in range(d)] + [f"zs_{j}" for j in range(d)]
    path = _out(cfg, "embed.csv")
    write_csv(path, np.hstack([Zt, Zs]), header)
    write_tensor(_out(cfg, "embed_teacher.odst"), Zt)
    write_tensor(_out(cfg, "embed_student.odst"), Zs)
    echo(f"embedded {len(X)} rows in {d} dims -> {path}")
    return {"Zt": Zt, "Zs": Zs, "path": path}
