import struct

import numpy as np
import pytest

from se3set.checkpoint import (
    CheckpointError,
    ConfigMismatchError,
    CorruptCheckpointError,
    load_checkpoint,
    read_tensors,
    save_checkpoint,
    write_tensors,
)
from se3set.fragment import build_hypergraph
from se3set.model import ModelConfig, SE3Set, make_batch

from molecules import ethanol, methyl_glycolate
from test_model import SMALL


@pytest.fixture
def saved(tmp_path):
    m = SE3Set(ModelConfig(**SMALL), seed=5)
    m.energy_shift[6] = -3.25
    m.energy_scale = 0.7
    path = tmp_path / "m.se3s"
    save_checkpoint(path, m, extra={"note": "x"}, optimizer_state={"step": np.array([4.0])})
    return m, path


def test_round_trip_bit_identical(saved):
    m, path = saved
    back, extra, opt = load_checkpoint(path, ModelConfig(**SMALL))
    assert extra == {"note": "x"} and opt["step"][0] == 4.0
    mols = [ethanol(), methyl_glycolate()]
    batch = make_batch([(mol, build_hypergraph(mol)) for mol in mols])
    E0, F0 = m.energy_and_forces(batch)
    E1, F1 = back.energy_and_forces(batch)
    assert E0.tobytes() == E1.tobytes() and F0.tobytes() == F1.tobytes()


def test_header_layout(saved):
    _, path = saved
    raw = path.read_bytes()
    assert raw[:4] == b"SE3S"
    assert struct.unpack("<I", raw[4:8])[0] == 1


def test_truncated(saved):
    _, path = saved
    raw = path.read_bytes()
    for cut in (len(raw) - 8, 10, 20):
        path.write_bytes(raw[:cut])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


def test_bad_magic_and_header(saved):
    _, path = saved
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CorruptCheckpointError):
        read_tensors(path)
    path.write_bytes(raw[:16] + b"\xff" + raw[17:])
    with pytest.raises(CorruptCheckpointError):
        read_tensors(path)
    path.write_bytes(raw + b"\0" * 8)
    with pytest.raises(CorruptCheckpointError):
        read_tensors(path)


def test_version(saved):
    _, path = saved
    raw = path.read_bytes()
    path.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        read_tensors(path)


def test_config_mismatch(saved):
    _, path = saved
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, ModelConfig(**{**SMALL, "blocks": 2}))


def test_missing_and_unexpected_tensors(tmp_path, saved):
    m, path = saved
    header, tensors = read_tensors(path)
    header.pop("tensors")
    short = dict(tensors)
    short.pop("param.head.out_b")
    write_tensors(tmp_path / "a", header, short)
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tmp_path / "a")
    write_tensors(tmp_path / "b", header, {**tensors, "param.extra": np.zeros(2)})
    with pytest.raises(CheckpointError, match="unexpected"):
        load_checkpoint(tmp_path / "b")
    bad = dict(tensors)
    bad["param.head.out_b"] = np.zeros(2)
    write_tensors(tmp_path / "c", header, bad)
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(tmp_path / "c")
