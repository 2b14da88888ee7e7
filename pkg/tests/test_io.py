"""Tensor container, dataset/checkpoint directories and config parsing."""
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from odsd.config import ExperimentConfig, parse_text, parse_value
from odsd.errors import ConfigError, FormatError
from odsd.nets import LabeledDataset, MlpModel, SgdState, UnlabeledPool
from odsd.storage import load_checkpoint, load_labeled, load_pool, save_checkpoint, save_dataset
from odsd.tensor_io import decode, encode, header_size, read_tensor, write_tensor

# tensor container ------------------------------------------------------------


def test_header_layout():
    buf = encode(np.arange(6.0).reshape(2, 3))
    # magic, u16 version, u8 dtype, u8 rank, two u64 dims: 24 bytes
    assert header_size(2) == 24
    assert buf[:4] == b"ODST"
    assert struct.unpack_from("<HBB", buf, 4) == (1, 1, 2)
    assert struct.unpack_from("<2Q", buf, 8) == (2, 3)
    assert len(buf) == 24 + 6 * 8


@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=4),
              elements=st.floats(allow_nan=False)))
def test_round_trip(a):
    b = decode(encode(a))
    assert b.shape == a.shape
    np.testing.assert_array_equal(b, a)


def test_truncation_reports_offset():
    buf = encode(np.ones((2, 2)))
    with pytest.raises(FormatError) as info:
        decode(buf[:-3])
    assert info.value.offset == 24 + 29
    with pytest.raises(FormatError) as info:
        decode(buf[:5])
    assert info.value.offset == 5
    with pytest.raises(FormatError) as info:
        decode(buf[:12])
    assert info.value.offset == 12
    with pytest.raises(FormatError) as info:
        decode(buf + b"\0")
    assert "oversized" in str(info.value)


def test_bad_magic_version_dtype():
    buf = bytearray(encode(np.ones(2)))
    with pytest.raises(FormatError) as info:
        decode(b"XXXX" + bytes(buf[4:]))
    assert info.value.offset == 0
    buf[4] = 9
    with pytest.raises(FormatError, match="version"):
        decode(bytes(buf))
    buf[4], buf[6] = 1, 7
    with pytest.raises(FormatError, match="dtype"):
        decode(bytes(buf))


def test_csv_fallback(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2.5\n-3,4e-1\n")
    np.testing.assert_array_equal(read_tensor(p), [[1, 2.5], [-3, 0.4]])
    write_tensor(tmp_path / "y.csv", np.eye(2))
    np.testing.assert_array_equal(read_tensor(tmp_path / "y.csv"), np.eye(2))
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
    with pytest.raises(FormatError, match=":2:"):
        read_tensor(tmp_path / "bad.csv")
    (tmp_path / "ragged.csv").write_text("a,b\n1\n")
    with pytest.raises(FormatError, match="ragged"):
        read_tensor(tmp_path / "ragged.csv")


# storage ---------------------------------------------------------------------


def test_dataset_round_trip(tmp_path, rng):
    ds = LabeledDataset(rng.standard_normal((5, 3)), np.array([0, 1, 2, 1, 0]))
    save_dataset(tmp_path / "d", ds)
    back = load_labeled(tmp_path / "d")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    pool = UnlabeledPool(rng.standard_normal((4, 3)), np.array([0, 1, 0, 1]), ("a", "b", "c", "d"))
    save_dataset(tmp_path / "p", pool)
    back = load_pool(tmp_path / "p")
    assert back.ids == ("a", "b", "c", "d")
    np.testing.assert_array_equal(back.provenance, pool.provenance)


def test_pool_without_provenance(tmp_path, rng):
    (tmp_path / "p").mkdir()
    write_tensor(tmp_path / "p" / "features.odst", rng.standard_normal((3, 2)))
    pool = load_pool(tmp_path / "p")
    assert pool.ids == ("0", "1", "2") and np.all(pool.provenance == 0)


def test_bad_labels(tmp_path):
    save_dataset(tmp_path / "d", LabeledDataset(np.zeros((2, 2)), np.array([0, 1])))
    write_tensor(tmp_path / "d" / "labels.odst", np.array([0.5, 1.0]))
    with pytest.raises(FormatError):
        load_labeled(tmp_path / "d")


def test_checkpoint_round_trip(tmp_path):
    model = MlpModel.init((3, 4, 2), 7)
    state = SgdState.for_model(model, lr=0.1)
    state.velocity = [np.full_like(v, 0.25) for v in state.velocity]
    save_checkpoint(str(tmp_path / "ck"), model, "student", state, run_id="abc", epochs_completed=2)
    back, manifest, st2 = load_checkpoint(str(tmp_path / "ck"), with_state=True, sgd=(0.1, 0.9, 5e-4))
    assert back.checksum() == model.checksum()
    assert manifest["kind"] == "student" and manifest["epochs_completed"] == 2
    assert manifest["layer_sizes"] == [3, 4, 2] and manifest["init_seed"] == 7
    assert all(np.all(v == 0.25) for v in st2.velocity)
    # overwrite in place
    save_checkpoint(str(tmp_path / "ck"), MlpModel.init((3, 4, 2), 8), "student")
    assert load_checkpoint(str(tmp_path / "ck"))[1]["has_velocity"] is False
    assert not (tmp_path / "ck.tmp").exists()


# config ----------------------------------------------------------------------


def test_defaults():
    cfg = ExperimentConfig()
    h = cfg.hyper()
    assert (h.tau, h.tau1, h.tau2, h.lambda1, h.lambda2, h.delta) == (4.0, 0.5, 0.5, 10.0, 0.5, 1.0)
    t = cfg.train()
    assert (t.lr, t.momentum, t.weight_decay, t.batch) == (0.025, 0.9, 5e-4, 64)
    assert cfg["aps.k"] == 5


def test_parse_grammar():
    vals = parse_text('# comment\naps.k = 3  # trailing\n\npaths.out = "a b#c"\nmodel.student_hidden = 8,4\n')
    assert vals == {"aps.k": 3, "paths.out": "a b#c", "model.student_hidden": (8, 4)}
    assert parse_value("train.record_wall_time", "yes") is True


MALFORMED = [
    ("aps.kk = 3", "did you mean"),
    ("aps.k = 3\naps.k = 4", "duplicate"),
    ("aps.k 3", "expected"),
    ("k = 3", "malformed key"),
    ("aps.k =", "no value"),
    ("aps.k = three", "expects"),
    ("aps.k = 0", "out of range"),
    ("dcrd.tau = 0", "out of range"),
    ("aps.outlier_sign = sideways", "one of"),
    ('paths.out = "oops', "unbalanced"),
    ("aug.kind = shift-flip", "grid"),
]


@pytest.mark.parametrize("text,match", MALFORMED)
def test_malformed_configs(tmp_path, text, match):
    p = tmp_path / "bad.cfg"
    p.write_text(text + "\n")
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.load(p)


def test_dump_round_trip_and_run_id(tmp_path):
    cfg = ExperimentConfig.load(None, ["model.student_hidden=", "paths.out=x y", "aps.k=4"])
    p = tmp_path / "c.cfg"
    p.write_text(cfg.dump())
    back = ExperimentConfig.load(p)
    assert back.items() == cfg.items()
    assert back.run_id() == cfg.run_id()
    # paths and wall-time recording do not change the run identity
    assert cfg.replace(paths__out="elsewhere", train__record_wall_time=True).run_id() == cfg.run_id()
    assert cfg.replace(aps__k=5).run_id() != cfg.run_id()


def test_with_seed_and_overrides():
    cfg = ExperimentConfig.load(None, ["train.seed=1"]).with_seed(9)
    assert all(v == 9 for k, v in cfg.items() if k.endswith(".seed"))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(None, ["aps.k"])


def test_relative_paths_resolve_against_config(tmp_path):
    p = tmp_path / "sub" / "c.cfg"
    p.parent.mkdir()
    p.write_text("paths.train = data/train\n")
    cfg = ExperimentConfig.load(p)
    assert cfg.path("paths.train") == str(tmp_path / "sub" / "data" / "train")
    assert cfg.path("paths.test", "data/test").endswith("data/test")
