import struct

import numpy as np
import pytest

from numerics.layers import UShapedNet
from utils.artifact_store import ArtifactStore, get_artifact_store
from utils.checkpoint_archive import (
    MAGIC,
    decode_archive,
    encode_archive,
    load_module_state,
    read_archive,
    write_archive
)
from utils.errors import ContractViolation, MissingArtifactError, RunLockedError


def test_header_layout():
    payload = encode_archive({"w": np.arange(6.0).reshape(2, 3)})
    assert payload[:4] == MAGIC
    assert struct.unpack_from("<HI", payload, 4) == (1, 1)
    name_length = struct.unpack_from("<H", payload, 10)[0]
    assert payload[12:12 + name_length] == b"w"
    # header, name, rank, two extents, six float64 values
    assert len(payload) == 10 + 2 + 1 + 1 + 8 + 48


def test_values_and_order_survive():
    tensors = {"b": np.array([1.5, -2.0]), "a": np.float64(3.25), "c": np.zeros((1, 2, 2))}
    decoded = decode_archive(encode_archive(tensors))
    assert list(decoded) == ["b", "a", "c"]
    assert decoded["a"].shape == ()
    assert np.array_equal(decoded["b"], tensors["b"])


def test_corrupt_payloads():
    payload = encode_archive({"w": np.ones(3)})
    with pytest.raises(ContractViolation, match="magic"):
        decode_archive(b"NOPE" + payload[4:])
    with pytest.raises(ContractViolation, match="trailing"):
        decode_archive(payload + b"\x00")


def test_files(tmp_path):
    path = write_archive(str(tmp_path / "ckpt" / "net.hflw"), {"w": np.ones(2)})
    assert np.array_equal(read_archive(path)["w"], np.ones(2))
    with pytest.raises(MissingArtifactError):
        read_archive(str(tmp_path / "missing.hflw"))


def test_module_state_must_match():
    net = UShapedNet(1, 1, (4, 8), spatial=(8, 8))
    with pytest.raises(ContractViolation, match="missing"):
        load_module_state(net, {"unexpected": np.zeros(1)})


def test_store_checkpoints_tables_and_lock(tmp_path):
    store = ArtifactStore(str(tmp_path / "run"))
    net = UShapedNet(1, 1, (4, 8), spatial=(8, 8))
    store.save_checkpoint("net", net, {"width": 4})
    state, meta = store.load_checkpoint("net")
    assert meta == {"width": 4.0}
    assert set(state) == set(net.state_dict())
    with pytest.raises(MissingArtifactError, match="adapt"):
        store.load_checkpoint("flow", required_by="adapt")

    with store.lock():
        with pytest.raises(RunLockedError):
            with store.lock():
                pass
    with store.lock():
        pass

    manifest = store.record_stage("gen-data", "abc", "v1", [store.checkpoint_path("net")], [], 1.23456)
    assert manifest["stages"]["gen-data"]["checkpoints"] == ["checkpoints/net.hflw"]
    assert manifest["stages"]["gen-data"]["wall_clock_seconds"] == 1.235
    assert get_artifact_store(str(tmp_path / "run")) is get_artifact_store(str(tmp_path / "run" / "."))
