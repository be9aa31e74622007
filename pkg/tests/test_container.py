"""Container and checkpoint round-trip, corruption, and digest tests."""

import numpy as np
import pytest

from cheatlab import container as ct
from cheatlab.autodiff import ParamSet
from cheatlab.errors import FormatError, IntegrityError


def sample_params(seed=0):
    rng = np.random.default_rng(seed)
    p = ParamSet()
    p.add("enc/w0", rng.normal(0, 1, (4, 6)))
    p.add("enc/b0", rng.normal(0, 1, 4))
    p.add("scalarish", np.asarray(rng.normal()), trainable=False)
    return p


def test_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "a.ckpt"
    p = sample_params()
    ct.save_checkpoint(path, "vae", p, {"k": 8})
    loaded = ct.load_checkpoint(path)
    assert loaded.stage == "vae"
    assert loaded.metadata["k"] == 8
    assert loaded.params.names() == p.names()
    for name, t in p.items():
        got = loaded.params[name]
        assert got.data.shape == t.data.shape
        assert np.array_equal(got.data, t.data)  # bit-exact float64
        assert got.trainable == t.trainable


def test_save_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ct.save_checkpoint(a, "vae", sample_params(), {"k": 8, "note": "x"})
    ct.save_checkpoint(b, "vae", sample_params(), {"note": "x", "k": 8})
    assert a.read_bytes() == b.read_bytes()


def test_digest_is_64_hex_and_order_sensitive():
    p = sample_params()
    d = ct.params_digest(p)
    assert len(d) == 64 and set(d) <= set("0123456789abcdef")
    assert ct.params_digest(sample_params()) == d
    q = ParamSet()
    for name, t in reversed(list(p.items())):
        q.add(name, t.data.copy(), trainable=t.trainable)
    assert ct.params_digest(q) != d


def test_digest_changes_on_any_entry(tmp_path):
    p = sample_params()
    d = ct.params_digest(p)
    p["enc/b0"].data[2] += 1e-12
    assert ct.params_digest(p) != d


def test_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    ct.save_checkpoint(path, "s", sample_params(), {})
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        ct.load_checkpoint(path)


def test_truncation_mid_record(tmp_path):
    path = tmp_path / "x.ckpt"
    ct.save_checkpoint(path, "s", sample_params(), {})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        ct.load_checkpoint(path)


def test_payload_tamper_is_integrity_error(tmp_path):
    path = tmp_path / "x.ckpt"
    ct.save_checkpoint(path, "s", sample_params(), {})
    blob = bytearray(path.read_bytes())
    blob[40] ^= 0xFF  # inside the first record payload
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        ct.load_checkpoint(path)


def test_metadata_tamper_is_integrity_error(tmp_path):
    # Flipping a digest character in the JSON trailer must not load cleanly.
    path = tmp_path / "x.ckpt"
    digest = ct.save_checkpoint(path, "s", sample_params(), {"frozen": "ab12"})
    blob = path.read_bytes()
    idx = blob.find(b'"frozen":"ab12"')
    assert idx > 0
    tampered = blob[:idx] + b'"frozen":"cd34"' + blob[idx + 15 :]
    path.write_bytes(tampered)
    with pytest.raises(IntegrityError):
        ct.load_checkpoint(path)
    assert len(digest) == 64


def test_version_bump_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    ct.save_checkpoint(path, "s", sample_params(), {})
    blob = bytearray(path.read_bytes())
    blob[4] = 9  # version field
    # Re-seal the checksum so the failure is structural, not integrity.
    import hashlib

    payload = bytes(blob[:-32])
    path.write_bytes(payload + hashlib.sha256(payload).digest())
    with pytest.raises(FormatError) as err:
        ct.load_checkpoint(path)
    assert "version" in str(err.value)


def test_trailing_garbage_rejected(tmp_path):
    import hashlib

    path = tmp_path / "x.ckpt"
    ct.save_checkpoint(path, "s", sample_params(), {})
    blob = path.read_bytes()
    payload = blob[:-32] + b"junk"
    path.write_bytes(payload + hashlib.sha256(payload).digest())
    with pytest.raises(FormatError):
        ct.load_checkpoint(path)


def test_raw_container_roundtrip(tmp_path):
    path = tmp_path / "d.bin"
    rng = np.random.default_rng(3)
    records = {
        "ep00000/depth": rng.random((7, 16)),
        "ep00000/actions": rng.random((7, 4)),
        "empty": np.zeros((0, 4)),
    }
    ct.write_container(path, records, {"n": 7})
    got, meta = ct.read_container(path)
    assert meta == {"n": 7}
    assert list(got) == list(records)
    for k in records:
        assert np.array_equal(got[k], records[k])
        assert got[k].shape == records[k].shape
