import hashlib

import numpy as np
import pytest

from aeskd import fileformats as ff


def test_tensor_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(4,), (3, 5), (2, 3, 4, 5)]:
        arr = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / "t.ten"
        ff.write_tensor(path, arr)
        back = ff.read_tensor(path)
        assert back.dtype == np.float32
        assert arr.tobytes() == back.tobytes()


def test_tensor_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "bad.ten"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ff.FormatError, match="offset 0"):
        ff.read_tensor(path)


def test_tensor_truncation_reports_offset(tmp_path):
    arr = np.ones((4, 4), dtype=np.float32)
    blob = ff.tensor_to_bytes(arr)
    path = tmp_path / "trunc.ten"
    path.write_bytes(blob[:-8])
    with pytest.raises(ff.FormatError, match="truncated"):
        ff.read_tensor(path)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    state = {
        "param:backbone.stage0.weight": rng.standard_normal((8, 3, 3, 3)).astype(np.float32),
        "buffer:bn.running_mean": rng.standard_normal(8).astype(np.float32),
    }
    path = tmp_path / "model.ckpt"
    ff.write_checkpoint(path, state)
    back = ff.read_checkpoint(path)
    assert set(back) == set(state)
    for key in state:
        assert state[key].tobytes() == back[key].tobytes()


def test_feature_bank_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    bank = ff.FeatureBank(
        ids=rng.integers(0, 2**40, size=64).astype(np.uint64),
        features=rng.standard_normal((64, 56)).astype(np.float32),
    )
    path = tmp_path / "bank.gsf"
    ff.write_feature_bank(path, bank)
    back = ff.read_feature_bank(path)
    assert bank.ids.tobytes() == back.ids.tobytes()
    assert bank.features.tobytes() == back.features.tobytes()


def test_feature_bank_lookup_missing_id(tmp_path):
    bank = ff.FeatureBank(ids=np.array([1, 2], dtype=np.uint64),
                          features=np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(KeyError, match="7"):
        bank.lookup([1, 7])


def test_knowledge_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    records = [
        ff.TeacherKnowledge(
            sample_id=int(i),
            feature=rng.standard_normal(16).astype(np.float32),
            distribution=(lambda v: (v / v.sum()).astype(np.float32))(rng.random(10)),
        )
        for i in range(100)
    ]
    path = tmp_path / "cache.tk"
    ff.write_knowledge_cache(path, records)
    back = ff.read_knowledge_cache(path)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert a.sample_id == b.sample_id
        assert a.feature.tobytes() == b.feature.tobytes()
        assert a.distribution.tobytes() == b.distribution.tobytes()


def test_empty_cache_roundtrip(tmp_path):
    path = tmp_path / "empty.tk"
    ff.write_knowledge_cache(path, [])
    assert ff.read_knowledge_cache(path) == []


def test_cache_rejects_inhomogeneous_widths(tmp_path):
    records = [
        ff.TeacherKnowledge(0, np.zeros(8, dtype=np.float32), np.full(10, 0.1, dtype=np.float32)),
        ff.TeacherKnowledge(1, np.zeros(9, dtype=np.float32), np.full(10, 0.1, dtype=np.float32)),
    ]
    with pytest.raises(ValueError, match="inhomogeneous"):
        ff.write_knowledge_cache(tmp_path / "bad.tk", records)


def test_cache_corrupt_magic_and_truncation(tmp_path):
    rng = np.random.default_rng(4)
    records = [
        ff.TeacherKnowledge(7, rng.standard_normal(4).astype(np.float32),
                            np.full(10, 0.1, dtype=np.float32))
    ]
    path = tmp_path / "cache.tk"
    ff.write_knowledge_cache(path, records)
    blob = path.read_bytes()

    bad = tmp_path / "bad_magic.tk"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ff.FormatError, match="magic"):
        ff.read_knowledge_cache(bad)

    trunc = tmp_path / "trunc.tk"
    trunc.write_bytes(blob[:-4])
    with pytest.raises(ff.FormatError, match="truncated"):
        ff.read_knowledge_cache(trunc)


def test_large_roundtrip_content_hash(tmp_path):
    # 10k random records across all three formats, verified by content hash
    rng = np.random.default_rng(5)

    feats = rng.standard_normal((10_000, 24)).astype(np.float32)
    ids = np.arange(10_000, dtype=np.uint64)
    bank_path = tmp_path / "big.gsf"
    ff.write_feature_bank(bank_path, ff.FeatureBank(ids=ids, features=feats))
    back = ff.read_feature_bank(bank_path)
    assert hashlib.sha256(feats.tobytes()).hexdigest() == hashlib.sha256(
        back.features.tobytes()
    ).hexdigest()

    dists = rng.random((10_000, 10)).astype(np.float32)
    dists /= dists.sum(axis=1, keepdims=True)
    records = [
        ff.TeacherKnowledge(int(i), feats[i], dists[i]) for i in range(10_000)
    ]
    cache_path = tmp_path / "big.tk"
    ff.write_knowledge_cache(cache_path, records)
    back_records = ff.read_knowledge_cache(cache_path)
    h1 = hashlib.sha256()
    h2 = hashlib.sha256()
    for a, b in zip(records, back_records):
        h1.update(a.feature.tobytes() + a.distribution.tobytes())
        h2.update(b.feature.tobytes() + b.distribution.tobytes())
    assert h1.hexdigest() == h2.hexdigest()
