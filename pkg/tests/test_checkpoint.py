import struct

import numpy as np
import pytest

from paretomerge import (
    Checkpoint,
    CheckpointFormatError,
    check_compatible,
    load_checkpoint,
    save_checkpoint,
)
from paretomerge.checkpoint import MAGIC


def make_ckpt(arrays, metadata=None):
    return Checkpoint(
        tensors={k: np.asarray(v, dtype=np.float32) for k, v in arrays.items()},
        metadata=metadata or {},
    )


def test_round_trip_single_tensor(tmp_path):
    ckpt = make_ckpt({"w": [1.0, 2.0]})
    path = tmp_path / "one.pmrg"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert list(loaded.tensors) == ["w"]
    assert loaded.tensors["w"].shape == (2,)
    assert np.array_equal(loaded.tensors["w"], np.array([1.0, 2.0], dtype=np.float32))


def test_round_trip_multi_tensor_bytes_identical(tmp_path):
    ckpt = make_ckpt(
        {"a": [[1.0, 2.0], [3.0, 4.0]], "b": [5.0], "c": np.arange(7, dtype=np.float32)},
        metadata={"source": "unit-test"},
    )
    p1, p2 = tmp_path / "x1.pmrg", tmp_path / "x2.pmrg"
    save_checkpoint(ckpt, p1)
    loaded = load_checkpoint(p1)
    assert loaded.metadata == {"source": "unit-test"}
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_round_trip_random_checkpoints(tmp_path):
    rng = np.random.default_rng(7)
    for trial in range(20):
        n_tensors = int(rng.integers(1, 11))
        tensors = {}
        for t in range(n_tensors):
            ndim = int(rng.integers(1, 4))
            shape = tuple(int(rng.integers(1, 12)) for _ in range(ndim))
            tensors[f"t{t}"] = rng.standard_normal(shape).astype(np.float32)
        ckpt = Checkpoint(tensors=tensors)
        path = tmp_path / f"r{trial}.pmrg"
        save_checkpoint(ckpt, path)
        assert load_checkpoint(path).equal_elements(ckpt)


def test_payload_offsets_are_eight_byte_aligned(tmp_path):
    import json

    # 7 and 3 element tensors force padding between payload segments
    ckpt = make_ckpt({"a": np.arange(7), "b": np.arange(3), "c": np.arange(2)})
    path = tmp_path / "aligned.pmrg"
    save_checkpoint(ckpt, path)
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen])
    offsets = {n: e["offset"] for n, e in header["tensors"].items()}
    assert offsets == {"a": 0, "b": 32, "c": 48}
    for entry in header["tensors"].values():
        assert entry["offset"] % 8 == 0
    assert load_checkpoint(path).equal_elements(ckpt)


def test_overwrite_existing_file(tmp_path):
    path = tmp_path / "same.pmrg"
    save_checkpoint(make_ckpt({"w": [1.0]}), path)
    save_checkpoint(make_ckpt({"w": [9.0, 9.0]}), path)
    assert load_checkpoint(path).tensors["w"].shape == (2,)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.pmrg"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path):
    header = b'{"tensors":{"w":{"shape":[2],"offset":0,"nbytes":8}},"metadata":{}}'
    blob = MAGIC + struct.pack("<I", len(header)) + header + b"\x00" * 4  # 4 of 8 bytes
    path = tmp_path / "trunc.pmrg"
    path.write_bytes(blob)
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(path)


def test_header_shape_nbytes_mismatch_rejected(tmp_path):
    header = b'{"tensors":{"w":{"shape":[2],"offset":0,"nbytes":4}},"metadata":{}}'
    blob = MAGIC + struct.pack("<I", len(header)) + header + b"\x00" * 8
    path = tmp_path / "mismatch.pmrg"
    path.write_bytes(blob)
    with pytest.raises(CheckpointFormatError, match="declares 4 bytes"):
        load_checkpoint(path)


def test_empty_tensor_table_rejected(tmp_path):
    header = b'{"tensors":{},"metadata":{}}'
    path = tmp_path / "empty.pmrg"
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header)
    with pytest.raises(CheckpointFormatError, match="at least one tensor"):
        load_checkpoint(path)


def test_nonfinite_rejected_unless_disabled(tmp_path):
    path = tmp_path / "nan.pmrg"
    header = b'{"tensors":{"w":{"shape":[2],"offset":0,"nbytes":8}},"metadata":{}}'
    payload = np.array([1.0, np.nan], dtype="<f4").tobytes()
    path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
    with pytest.raises(CheckpointFormatError, match="non-finite.*flat index 1"):
        load_checkpoint(path)
    loaded = load_checkpoint(path, validate=False)
    assert np.isnan(loaded.tensors["w"][1])


def test_unwritable_path_raises_io_error(tmp_path):
    with pytest.raises(OSError):
        save_checkpoint(make_ckpt({"w": [1.0]}), tmp_path / "nope" / "deep" / "x.pmrg")


def test_unicode_tensor_names_and_metadata_round_trip(tmp_path):
    ckpt = make_ckpt(
        {"層.weight": [1.0, 2.0], "plain": [3.0]},
        metadata={"来源": "テスト"},
    )
    path = tmp_path / "uni.pmrg"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert list(loaded.tensors) == ["層.weight", "plain"]
    assert loaded.metadata == {"来源": "テスト"}
    assert loaded.equal_elements(ckpt)


def test_checkpoint_invariants_enforced():
    with pytest.raises(CheckpointFormatError):
        Checkpoint(tensors={})
    with pytest.raises(CheckpointFormatError):
        Checkpoint(tensors={"": np.ones(3, dtype=np.float32)})
    with pytest.raises(CheckpointFormatError):
        Checkpoint(tensors={"s": np.float32(1.0)})  # scalar shape ()


def test_compatibility_report_cases():
    a = make_ckpt({"w": [1.0, 2.0], "w2": [3.0]})
    b = make_ckpt({"w": [1.0, 2.0], "w2": [0.0]})
    assert check_compatible(a, b).compatible

    c = make_ckpt({"w": [1.0, 2.0]})
    rep = check_compatible(a, c)
    assert not rep.compatible and rep.missing_in_b == ["w2"]

    d = make_ckpt({"w": [1.0, 2.0, 3.0], "w2": [0.0]})
    rep = check_compatible(a, d)
    assert not rep.compatible and rep.shape_mismatches == ["w"]


def test_compatibility_is_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(25):
        def rand_ckpt():
            names = rng.choice(["a", "b", "c", "d"], size=int(rng.integers(1, 4)), replace=False)
            return Checkpoint(
                tensors={
                    str(n): rng.standard_normal(int(rng.integers(1, 5))).astype(np.float32)
                    for n in names
                }
            )
        x, y = rand_ckpt(), rand_ckpt()
        assert check_compatible(x, y).compatible == check_compatible(y, x).compatible
