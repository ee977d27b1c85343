import os

import numpy as np
import pytest

from nes.metrics import PredictionMatrix
from nes.store import (
    ChecksumError,
    DuplicateKeyError,
    MissingKeyError,
    PredictionStore,
    StoreError,
    StoreKey,
    UnknownFormatError,
    decode_matrix,
    encode_matrix,
    export_tabular,
    import_tabular,
)


def f32_matrix(rng, n, c):
    """A matrix that is exactly representable in float32."""
    p = rng.dirichlet(np.ones(c), size=n).astype(np.float32).astype(np.float64)
    p[:, -1] = 0.0
    p[:, -1] = np.maximum(0.0, 1.0 - p.sum(axis=1))
    return PredictionMatrix(p)


class TestMatrixCodec:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m = f32_matrix(rng, int(rng.integers(1, 40)), int(rng.integers(2, 9)))
            out = decode_matrix(encode_matrix(m))
            np.testing.assert_array_equal(
                out.probs.astype(np.float32), m.probs.astype(np.float32)
            )

    def test_encoded_length(self):
        m = PredictionMatrix([[0.25, 0.75]] * 3)
        blob = encode_matrix(m)
        assert len(blob) == 16 + 4 * 3 * 2
        assert blob[:4] == b"NESP"

    def test_truncated_rejected(self):
        blob = encode_matrix(PredictionMatrix([[0.5, 0.5]] * 4))
        with pytest.raises(StoreError):
            decode_matrix(blob[:-3])

    def test_bad_magic_rejected(self):
        blob = encode_matrix(PredictionMatrix([[0.5, 0.5]]))
        with pytest.raises(StoreError):
            decode_matrix(b"XXXX" + blob[4:])

    def test_bad_version_rejected(self):
        blob = bytearray(encode_matrix(PredictionMatrix([[0.5, 0.5]])))
        blob[4] = 99
        with pytest.raises(StoreError):
            decode_matrix(bytes(blob))


class TestPredictionStore:
    def make_store(self, tmp_path, name="s"):
        return PredictionStore.create(str(tmp_path / name), "toy-space")

    def test_put_get_round_trip(self, tmp_path):
        store = self.make_store(tmp_path)
        rng = np.random.default_rng(1)
        m = f32_matrix(rng, 8, 3)
        key = StoreKey("archA", 0, "val", 0)
        store.put(key, m)
        reopened = PredictionStore.open(store.path)
        out = reopened.get(key)
        np.testing.assert_array_equal(
            out.probs.astype(np.float32), m.probs.astype(np.float32)
        )

    def test_tuple_keys_accepted(self, tmp_path):
        store = self.make_store(tmp_path)
        store.put(("archA", 1, "test", 2), PredictionMatrix([[0.5, 0.5]]))
        assert ("archA", 1, "test", 2) in store
        assert store.get(("archA", 1, "test", 2)).num_points == 1

    def test_duplicate_key_rejected(self, tmp_path):
        store = self.make_store(tmp_path)
        m = PredictionMatrix([[0.5, 0.5]])
        store.put(("a", 0, "val", 0), m)
        with pytest.raises(DuplicateKeyError):
            store.put(("a", 0, "val", 0), m)

    def test_missing_key(self, tmp_path):
        store = self.make_store(tmp_path)
        with pytest.raises(MissingKeyError):
            store.get(("nope", 0, "val", 0))

    def test_create_refuses_existing(self, tmp_path):
        self.make_store(tmp_path)
        with pytest.raises(StoreError):
            PredictionStore.create(str(tmp_path / "s"), "toy-space")

    def test_open_or_create_space_mismatch(self, tmp_path):
        self.make_store(tmp_path)
        with pytest.raises(StoreError):
            PredictionStore.open_or_create(str(tmp_path / "s"), "other-space")

    def test_labels_round_trip_and_conflict(self, tmp_path):
        store = self.make_store(tmp_path)
        store.set_labels("val", 0, [0, 1, 2])
        store.set_labels("val", 0, [0, 1, 2])  # idempotent
        with pytest.raises(StoreError):
            store.set_labels("val", 0, [2, 1, 0])
        reopened = PredictionStore.open(store.path)
        np.testing.assert_array_equal(reopened.labels("val", 0), [0, 1, 2])
        with pytest.raises(MissingKeyError):
            reopened.labels("test", 0)

    def test_matrix_labels_shape_mismatch(self, tmp_path):
        store = self.make_store(tmp_path)
        store.set_labels("val", 0, [0, 1, 2])
        with pytest.raises(StoreError):
            store.put(("a", 0, "val", 0), PredictionMatrix([[0.5, 0.5]]))

    def test_corrupted_payload_detected(self, tmp_path):
        store = self.make_store(tmp_path)
        key = StoreKey("a", 0, "val", 0)
        store.put(key, PredictionMatrix([[0.25, 0.75]] * 4))
        fname = store._entries[key]["file"]
        fpath = os.path.join(store.path, fname)
        blob = bytearray(open(fpath, "rb").read())
        blob[-1] ^= 0xFF
        open(fpath, "wb").write(bytes(blob))
        reopened = PredictionStore.open(store.path)
        with pytest.raises(ChecksumError):
            reopened.get(key)
        with pytest.raises(ChecksumError):
            reopened.verify()

    def test_truncated_payload_detected(self, tmp_path):
        store = self.make_store(tmp_path)
        key = StoreKey("a", 0, "val", 0)
        store.put(key, PredictionMatrix([[0.25, 0.75]] * 4))
        fpath = os.path.join(store.path, store._entries[key]["file"])
        blob = open(fpath, "rb").read()
        open(fpath, "wb").write(blob[:-4])
        with pytest.raises(ChecksumError):
            PredictionStore.open(store.path).get(key)

    def test_missing_payload_detected_on_open(self, tmp_path):
        store = self.make_store(tmp_path)
        key = StoreKey("a", 0, "val", 0)
        store.put(key, PredictionMatrix([[0.5, 0.5]]))
        os.remove(os.path.join(store.path, store._entries[key]["file"]))
        with pytest.raises(StoreError):
            PredictionStore.open(store.path)

    def test_orphans_and_temp_files_collected(self, tmp_path):
        # simulate a crash between writing a payload and the manifest:
        # unreferenced .nesp and leftover .tmp files must be swept on open
        store = self.make_store(tmp_path)
        store.put(("a", 0, "val", 0), PredictionMatrix([[0.5, 0.5]]))
        orphan = os.path.join(store.path, "m99999999.nesp")
        open(orphan, "wb").write(encode_matrix(PredictionMatrix([[0.5, 0.5]])))
        leftover = os.path.join(store.path, "m00000007.nesp.tmp")
        open(leftover, "wb").write(b"partial")
        reopened = PredictionStore.open(store.path)
        assert not os.path.exists(orphan)
        assert not os.path.exists(leftover)
        assert reopened.verify() == 1

    def test_put_many_and_queries(self, tmp_path):
        store = self.make_store(tmp_path)
        rng = np.random.default_rng(2)
        items = [
            (StoreKey(arch, seed, split, 0), f32_matrix(rng, 4, 3))
            for arch in ("a1", "a2")
            for seed in (0, 1, 2)
            for split in ("val", "test")
        ]
        store.put_many(items)
        assert store.arch_ids() == ["a1", "a2"]
        assert store.seeds_for("a1") == [0, 1, 2]
        assert len(store.keys()) == 12
        assert PredictionStore.open(store.path).verify() == 12

    def test_reopen_preserves_file_id_counter(self, tmp_path):
        store = self.make_store(tmp_path)
        store.put(("a", 0, "val", 0), PredictionMatrix([[0.5, 0.5]]))
        reopened = PredictionStore.open(store.path)
        reopened.put(("a", 1, "val", 0), PredictionMatrix([[0.5, 0.5]]))
        files = {rec["file"] for rec in reopened._entries.values()}
        assert len(files) == 2


class TestTabularImportExport:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        store = PredictionStore.create(str(tmp_path / "orig"), "tab-space")
        store.set_labels("val", 0, rng.integers(3, size=5))
        store.set_labels("test", 1, rng.integers(3, size=4))
        # arch ids with the native "|" separator must survive the trip
        keys = [StoreKey("sp|0:a,1:b", 0, "val", 0),
                StoreKey("sp|0:a,1:b", 1, "val", 0),
                StoreKey("sp|1:c,0:a", 0, "test", 1)]
        mats = [f32_matrix(rng, 5, 3), f32_matrix(rng, 5, 3), f32_matrix(rng, 4, 3)]
        store.put_many(zip(keys, mats))
        export = str(tmp_path / "export.npz")
        export_tabular(store, export)
        imported = import_tabular(export, str(tmp_path / "imported"))
        assert imported.space_id == "tab-space"
        assert imported.keys() == store.keys()
        for key, m in zip(keys, mats):
            np.testing.assert_array_equal(
                imported.get(key).probs.astype(np.float32),
                m.probs.astype(np.float32),
            )
        np.testing.assert_array_equal(imported.labels("test", 1),
                                      store.labels("test", 1))

    def test_logits_import_softmaxes(self, tmp_path):
        import json
        z = np.array([[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]])
        path = str(tmp_path / "logits.npz")
        np.savez(path, **{
            "__meta__": np.array(json.dumps(
                {"format": "nes-tabular-npz-v1", "space_id": "x", "kind": "logits"}
            )),
            "labels|val|0": np.array([0, 1]),
            "pred|archZ|0|val|0": z,
        })
        store = import_tabular(path, str(tmp_path / "out"))
        got = store.get(("archZ", 0, "val", 0)).probs
        e = np.exp(z - z.max(axis=1, keepdims=True))
        expected = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(got, expected, atol=1e-7)

    def test_unknown_format_rejected(self, tmp_path):
        path = str(tmp_path / "bad.npz")
        np.savez(path, something=np.zeros(3))
        with pytest.raises(UnknownFormatError):
            import_tabular(path, str(tmp_path / "out"))

    def test_wrong_format_tag_rejected(self, tmp_path):
        import json
        path = str(tmp_path / "bad2.npz")
        np.savez(path, __meta__=np.array(json.dumps({"format": "other-v9"})))
        with pytest.raises(UnknownFormatError):
            import_tabular(path, str(tmp_path / "out"))

    def test_export_without_labels_rejected_on_import(self, tmp_path):
        import json
        path = str(tmp_path / "nolabels.npz")
        np.savez(path, __meta__=np.array(json.dumps(
            {"format": "nes-tabular-npz-v1", "space_id": "x",
             "kind": "probabilities"}
        )))
        with pytest.raises(StoreError):
            import_tabular(path, str(tmp_path / "out"))
