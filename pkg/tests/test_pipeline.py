"""Subcommands end to end on small runs, in-process and through the console script."""
import json
import subprocess
import sys

import numpy as np
import pytest

from odsd.config import ExperimentConfig
from odsd.errors import ConfigError, ContractViolation, RequestTooLarge
from odsd.nets import LabeledDataset, MlpModel, UnlabeledPool
from odsd.pipeline import (cmd_distill, cmd_embed, cmd_eval, cmd_sample, cmd_score, cmd_synth,
                           cmd_train_teacher)
from odsd.storage import load_checkpoint, save_checkpoint, save_dataset

SMALL = ("synth.preset=separable", "teacher.epochs=2", "train.epochs=2", "aps.n_select=200")


def quiet(*_):
    pass


def cfg_for(out, *overrides, base=None, seed=0):
    sets = [f"paths.out={out}", *SMALL]
    if base is not None:
        sets += [f"paths.train={base}/data/train", f"paths.test={base}/data/test",
                 f"paths.pool={base}/data/pool", f"paths.teacher={base}/teacher"]
    return ExperimentConfig.load(None, sets + list(overrides)).with_seed(seed)


def odsd(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "odsd.cli", *args], capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def base(tmp_path_factory):
    out = tmp_path_factory.mktemp("base")
    cfg = cfg_for(out)
    cmd_synth(cfg, quiet)
    cmd_train_teacher(cfg, quiet)
    cmd_score(cfg, quiet)
    cmd_sample(cfg, quiet)
    return out


def fresh(tmp_path, base, *overrides):
    cfg = cfg_for(tmp_path, *overrides, base=base)
    cmd_score(cfg, quiet)
    cmd_sample(cfg, quiet)
    return cfg


def test_cli_chain(tmp_path):
    for cmd in ("synth", "train-teacher", "score", "sample", "distill"):
        r = odsd(cmd, "--out", "run", "--seed", "1", *sum((["--set", s] for s in SMALL), []), cwd=tmp_path)
        assert r.returncode == 0, r.stderr
    r = odsd("eval", "--out", "run", cwd=tmp_path)
    assert r.returncode == 0, r.stderr
    last = json.loads((tmp_path / "run" / "metrics.jsonl").read_text().splitlines()[-1])
    assert r.stdout.strip() == f"{last['test_accuracy']:.4f}"
    for name in ("scores.csv", "selection.txt", "teacher/manifest.json", "student/manifest.json"):
        assert (tmp_path / "run" / name).exists()


def test_cli_config_errors(tmp_path):
    (tmp_path / "bad.cfg").write_text("aps.kk = 3\n")
    r = odsd("score", "--config", "bad.cfg", cwd=tmp_path)
    assert r.returncode == 2 and "did you mean" in r.stderr
    r = odsd("eval", "--out", "nowhere", cwd=tmp_path)
    assert r.returncode == 2


def test_cli_gradcheck_modes(tmp_path):
    r = odsd("gradcheck", cwd=tmp_path)
    assert r.returncode == 0 and "passed" in r.stdout
    r = odsd("gradcheck", "--corrupt", "c1", cwd=tmp_path)
    assert r.returncode == 1
    assert [ln for ln in r.stdout.splitlines() if ln.startswith("c1")][0].split()[1] == "fail"
    r = odsd("gradcheck", "--degenerate", cwd=tmp_path)
    assert r.returncode == 0
    assert "skipped" in [ln for ln in r.stdout.splitlines() if ln.startswith("denoise")][0]


def test_resume_matches_uninterrupted_run(tmp_path, base):
    a = fresh(tmp_path / "a", base, "train.epochs=3")
    cmd_distill(a, quiet)
    b = fresh(tmp_path / "b", base, "train.epochs=3")
    cmd_distill(b, quiet, stop_after=1)
    assert len((tmp_path / "b" / "metrics.jsonl").read_text().splitlines()) == 1
    cmd_distill(b, quiet, resume=True)
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()
    ma, _ = load_checkpoint(str(tmp_path / "a" / "student"))
    mb, _ = load_checkpoint(str(tmp_path / "b" / "student"))
    assert ma.checksum() == mb.checksum()


def test_resume_refuses_other_run(tmp_path, base):
    cfg = fresh(tmp_path, base)
    cmd_distill(cfg, quiet, stop_after=1)
    with pytest.raises(ConfigError, match="belongs to run"):
        cmd_distill(cfg.replace(dcrd__tau=2.0), quiet, resume=True)


def test_kd_only_run(tmp_path, base):
    cfg = fresh(tmp_path, base, "dcrd.lambda1=0", "dcrd.lambda2=0")
    cmd_distill(cfg, quiet)
    for line in (tmp_path / "metrics.jsonl").read_text().splitlines():
        rec = json.loads(line)
        assert rec["total"] == rec["kd"]
        assert rec["wall_time"] is None


def test_zero_epochs_keeps_init(tmp_path, base):
    cfg = fresh(tmp_path, base, "train.epochs=0")
    cmd_distill(cfg, quiet)
    model, manifest = load_checkpoint(str(tmp_path / "student"))
    init = MlpModel.init(tuple(manifest["layer_sizes"]), cfg["train.seed"])
    assert model.checksum() == init.checksum()
    assert (tmp_path / "metrics.jsonl").read_text() == ""


def test_teacher_unchanged_by_distillation(tmp_path, base):
    before, _ = load_checkpoint(str(base / "teacher"))
    cmd_distill(fresh(tmp_path, base), quiet)
    after, _ = load_checkpoint(str(base / "teacher"))
    assert before.checksum() == after.checksum()


def test_sample_edge_cases(tmp_path, base):
    cfg = fresh(tmp_path, base, "aps.n_select=4000")
    ids = (tmp_path / "selection.txt").read_text().split()
    assert sorted(ids, key=int) == [str(i) for i in range(4000)]
    with pytest.raises(RequestTooLarge):
        cmd_sample(cfg.replace(aps__n_select=4001), quiet)
    res = cmd_sample(cfg.replace(aps__method="random", aps__n_select=100), quiet)
    assert res["n_selected"] == 100


def test_score_train_set_as_pool(tmp_path, base):
    from odsd.storage import load_labeled

    train = load_labeled(str(base / "data" / "train"))
    save_dataset(str(tmp_path / "pool"), UnlabeledPool(train.features, np.zeros(len(train), dtype=np.int64)))
    cfg = cfg_for(tmp_path, f"paths.teacher={base}/teacher", f"paths.pool={tmp_path}/pool")
    res = cmd_score(cfg, quiet)
    assert res["pool_ood_fraction"] == 0.0
    assert res["mean_sc"] > 0.95


def test_score_single_item_pool(tmp_path, base):
    save_dataset(str(tmp_path / "pool"), UnlabeledPool(np.full((1, 8), 5.0), np.zeros(1, dtype=np.int64)))
    cfg = cfg_for(tmp_path, f"paths.teacher={base}/teacher", f"paths.pool={tmp_path}/pool")
    cmd_score(cfg, quiet)
    row = (tmp_path / "scores.csv").read_text().splitlines()[1].split(",")
    assert float(row[4]) == 1.0


def test_class_count_mismatch(tmp_path, base):
    with pytest.raises(ConfigError, match="model.classes"):
        cmd_score(cfg_for(tmp_path, "model.classes=3", base=base), quiet)


def test_eval_shape_errors(tmp_path, base):
    save_dataset(str(tmp_path / "d"), LabeledDataset(np.zeros((3, 8)), np.array([0, 1, 5])))
    cfg = cfg_for(tmp_path, base=base)
    with pytest.raises(ContractViolation):
        cmd_eval(cfg, quiet, checkpoint=str(base / "teacher"), data=str(tmp_path / "d"))


def test_embed(tmp_path, base):
    X = np.random.default_rng(0).standard_normal((6, 8))
    X[3] = X[1]
    save_dataset(str(tmp_path / "d"), LabeledDataset(X, np.zeros(6, dtype=np.int64)))
    save_checkpoint(str(tmp_path / "student"), MlpModel.init((8, 16, 2), 0), "student")
    cfg = cfg_for(tmp_path, f"embed.data={tmp_path}/d", base=base)
    res = cmd_embed(cfg, quiet)
    np.testing.assert_allclose(res["Zt"][1], res["Zt"][3], atol=1e-12)
    np.testing.assert_allclose(res["Zs"][1], res["Zs"][3], atol=1e-12)
    assert (tmp_path / "embed.csv").read_text().splitlines()[0] == "zt_0,zt_1,zs_0,zs_1"
    # a two-point batch embeds on a single line: the points sit symmetrically about the origin
    res = cmd_embed(cfg.replace(embed__batch=2, embed__d=1), quiet)
    assert res["Zt"][0, 0] == pytest.approx(-res["Zt"][1, 0])
    with pytest.raises(ContractViolation):
        cmd_embed(cfg.replace(embed__batch=2, embed__d=3), quiet)
