"""Persistent store of prediction matrices keyed by (arch, seed, split, severity).

Layout: a directory holding one binary matrix file per entry plus a
line-delimited JSON manifest (``manifest.jsonl``). Matrix files use a
fixed little-endian format::

    magic "NESP" | u32 version = 1 | u32 N | u32 C | N*C float32, row-major

so a file is exactly 16 + 4*N*C bytes. The manifest records labels per
(split, severity) and one entry line per matrix with its sha256
checksum. All mutations rewrite the manifest to a temp file and rename,
and matrix payloads are written temp-then-rename, so readers never see a
partial entry; orphan matrix files left by a crash are garbage-collected
on open.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .metrics import PredictionMatrix

MAGIC = b"NESP"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"


class StoreError(RuntimeError):
    pass


class DuplicateKeyError(StoreError):
    pass


class MissingKeyError(KeyError, StoreError):
    pass


class ChecksumError(StoreError):
    pass


@dataclass(frozen=True)
class StoreKey:
    arch_id: str
    seed: int
    split: str
    severity: int

    def as_tuple(self):
        return (self.arch_id, self.seed, self.split, self.severity)


def _coerce_key(key) -> StoreKey:
    if isinstance(key, StoreKey):
        return key
    arch_id, seed, split, severity = key
    return StoreKey(str(arch_id), int(seed), str(split), int(severity))


def encode_matrix(matrix: PredictionMatrix) -> bytes:
    n, c = matrix.num_points, matrix.num_classes
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, n, c)
    body = matrix.probs.astype("<f4").tobytes(order="C")
    return header + body


def decode_matrix(blob: bytes) -> PredictionMatrix:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise StoreError("bad matrix file: missing NESP magic")
    version, n, c = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise StoreError(f"unsupported matrix format version {version}")
    expected = 16 + 4 * n * c
    if len(blob) != expected:
        raise StoreError(f"matrix file length {len(blob)} != expected {expected}")
    data = np.frombuffer(blob[16:], dtype="<f4").reshape(n, c)
    return PredictionMatrix(data.astype(np.float64))


def _sha256(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _atomic_write(path: str, blob: bytes):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class PredictionStore:
    """Single-writer, multi-reader store of prediction matrices."""

    def __init__(self, path: str, space_id: str, entries: dict, labels: dict,
                 next_file_id: int):
        self.path = path
        self.space_id = space_id
        self._entries = entries  # StoreKey -> entry dict
        self._labels = labels    # (split, severity) -> np.ndarray
        self._next_file_id = next_file_id

    # lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, path: str, space_id: str) -> "PredictionStore":
        os.makedirs(path, exist_ok=True)
        if os.path.exists(os.path.join(path, MANIFEST_NAME)):
            raise StoreError(f"store already exists at {path}")
        store = cls(path, space_id, {}, {}, 0)
        store._write_manifest()
        return store

    @classmethod
    def open(cls, path: str) -> "PredictionStore":
        manifest = os.path.join(path, MANIFEST_NAME)
        if not os.path.exists(manifest):
            raise StoreError(f"no manifest at {manifest}")
        entries, labels = {}, {}
        space_id, next_file_id = "", 0
        with open(manifest, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format_version") != FORMAT_VERSION:
                raise StoreError("unsupported manifest format version")
            space_id = header["space_id"]
            next_file_id = int(header.get("next_file_id", 0))
            for line in fh:
                rec = json.loads(line)
                if rec["kind"] == "labels":
                    labels[(rec["split"], rec["severity"])] = np.asarray(
                        rec["labels"], dtype=np.int64
                    )
                elif rec["kind"] == "entry":
                    key = StoreKey(rec["arch"], rec["seed"], rec["split"],
                                   rec["severity"])
                    if key in entries:
                        raise StoreError(f"duplicate manifest key {key}")
                    entries[key] = rec
        store = cls(path, space_id, entries, labels, next_file_id)
        store._collect_orphans()
        store._check_referential_integrity()
        return store

    @classmethod
    def open_or_create(cls, path: str, space_id: str) -> "PredictionStore":
        if os.path.exists(os.path.join(path, MANIFEST_NAME)):
            store = cls.open(path)
            if store.space_id != space_id:
                raise StoreError(
                    f"store at {path} holds space {store.space_id!r}, not {space_id!r}"
                )
            return store
        return cls.create(path, space_id)

    def _collect_orphans(self):
        referenced = {rec["file"] for rec in self._entries.values()}
        for name in os.listdir(self.path):
            if name == MANIFEST_NAME:
                continue
            if name.endswith(".tmp") or (name.endswith(".nesp") and name not in referenced):
                os.remove(os.path.join(self.path, name))

    def _check_referential_integrity(self):
        for key, rec in self._entries.items():
            fpath = os.path.join(self.path, rec["file"])
            if not os.path.exists(fpath):
                raise StoreError(f"entry {key} references missing file {rec['file']}")
            lab = self._labels.get((key.split, key.severity))
            if lab is not None and rec["n"] != len(lab):
                raise StoreError(f"entry {key} shape disagrees with its labels")

    # manifest ------------------------------------------------------------

    def _manifest_lines(self):
        yield json.dumps({
            "format_version": FORMAT_VERSION,
            "space_id": self.space_id,
            "next_file_id": self._next_file_id,
            "splits": sorted({k.split for k in self._entries}),
            "severities": sorted({k.severity for k in self._entries}),
        })
        for (split, severity), lab in sorted(self._labels.items()):
            yield json.dumps({"kind": "labels", "split": split,
                              "severity": severity,
                              "labels": [int(v) for v in lab]})
        for key in sorted(self._entries, key=lambda k: k.as_tuple()):
            yield json.dumps(self._entries[key])

    def _write_manifest(self):
        blob = ("\n".join(self._manifest_lines()) + "\n").encode("utf-8")
        _atomic_write(os.path.join(self.path, MANIFEST_NAME), blob)

    # labels --------------------------------------------------------------

    def set_labels(self, split: str, severity: int, labels):
        lab = np.asarray(labels, dtype=np.int64)
        existing = self._labels.get((split, severity))
        if existing is not None:
            if not np.array_equal(existing, lab):
                raise StoreError(f"labels for ({split}, {severity}) already differ")
            return
        self._labels[(split, severity)] = lab
        self._write_manifest()

    def labels(self, split: str, severity: int = 0) -> np.ndarray:
        try:
            return self._labels[(split, severity)]
        except KeyError:
            raise MissingKeyError(f"no labels for ({split}, {severity})")

    def label_keys(self):
        return sorted(self._labels)

    # entries -------------------------------------------------------------

    def __contains__(self, key) -> bool:
        return _coerce_key(key) in self._entries

    def keys(self):
        return sorted(self._entries, key=lambda k: k.as_tuple())

    def arch_ids(self):
        return sorted({k.arch_id for k in self._entries})

    def seeds_for(self, arch_id: str, split: str = "val", severity: int = 0):
        return sorted(k.seed for k in self._entries
                      if k.arch_id == arch_id and k.split == split
                      and k.severity == severity)

    def _prepare_entry(self, key: StoreKey, matrix: PredictionMatrix):
        if key in self._entries:
            raise DuplicateKeyError(f"duplicate key {key}")
        lab = self._labels.get((key.split, key.severity))
        if lab is not None and matrix.num_points != len(lab):
            raise StoreError(
                f"matrix has {matrix.num_points} rows but labels for "
                f"({key.split}, {key.severity}) have {len(lab)}"
            )
        blob = encode_matrix(matrix)
        fname = f"m{self._next_file_id:08d}.nesp"
        self._next_file_id += 1
        record = {"kind": "entry", "arch": key.arch_id, "seed": key.seed,
                  "split": key.split, "severity": key.severity, "file": fname,
                  "checksum": _sha256(blob), "n": matrix.num_points,
                  "c": matrix.num_classes}
        return fname, blob, record

    def put(self, key, matrix: PredictionMatrix):
        key = _coerce_key(key)
        fname, blob, record = self._prepare_entry(key, matrix)
        _atomic_write(os.path.join(self.path, fname), blob)
        self._entries[key] = record
        self._write_manifest()

    def put_many(self, items):
        """Bulk insert with a single manifest rewrite at the end."""
        staged = []
        for key, matrix in items:
            key = _coerce_key(key)
            fname, blob, record = self._prepare_entry(key, matrix)
            staged.append((key, fname, blob, record))
        for key, fname, blob, record in staged:
            _atomic_write(os.path.join(self.path, fname), blob)
            self._entries[key] = record
        self._write_manifest()

    def get(self, key) -> PredictionMatrix:
        key = _coerce_key(key)
        rec = self._entries.get(key)
        if rec is None:
            raise MissingKeyError(f"no entry for {key}")
        fpath = os.path.join(self.path, rec["file"])
        try:
            with open(fpath, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise StoreError(f"cannot read {fpath}: {exc}")
        if _sha256(blob) != rec["checksum"]:
            raise ChecksumError(f"checksum mismatch for {key}")
        matrix = decode_matrix(blob)
        if (matrix.num_points, matrix.num_classes) != (rec["n"], rec["c"]):
            raise StoreError(f"decoded shape disagrees with manifest for {key}")
        return matrix

    def verify(self):
        """Full integrity scan; returns the number of verified entries."""
        for key in self.keys():
            self.get(key)
        self._check_referential_integrity()
        return len(self._entries)


# tabular import / export -------------------------------------------------

TABULAR_FORMAT = "nes-tabular-npz-v1"


class UnknownFormatError(StoreError):
    pass


def export_tabular(store: PredictionStore, path: str):
    """Write the store as a single-file tabular export (npz)."""
    arrays = {"__meta__": np.array(json.dumps({
        "format": TABULAR_FORMAT,
        "space_id": store.space_id,
        "kind": "probabilities",
    }))}
    for split, severity in store.label_keys():
        arrays[f"labels|{split}|{severity}"] = store.labels(split, severity)
    for key in store.keys():
        name = f"pred|{key.arch_id}|{key.seed}|{key.split}|{key.severity}"
        arrays[name] = store.get(key).probs.astype(np.float32)
    np.savez(path, **arrays)


def import_tabular(path: str, store_path: str) -> PredictionStore:
    """Convert a tabular export into a native store.

    Only the ``nes-tabular-npz-v1`` layout is accepted: an npz with a
    ``__meta__`` JSON string (declaring ``kind`` = probabilities or
    logits), ``labels|split|severity`` vectors, and
    ``pred|arch|seed|split|severity`` matrices. Logits are softmaxed on
    import.
    """
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise UnknownFormatError("export lacks __meta__; unknown format")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != TABULAR_FORMAT:
            raise UnknownFormatError(f"unsupported export format {meta.get('format')!r}")
        kind = meta.get("kind", "probabilities")
        if kind not in ("probabilities", "logits"):
            raise UnknownFormatError(f"unsupported payload kind {kind!r}")
        store = PredictionStore.create(store_path, meta.get("space_id", "imported"))
        label_names = [n for n in data.files if n.startswith("labels|")]
        if not label_names:
            raise StoreError("export contains no labeled splits")
        for name in label_names:
            _, split, severity = name.split("|")
            store.set_labels(split, int(severity), data[name])
        items = []
        for name in data.files:
            if not name.startswith("pred|"):
                continue
            # arch ids may themselves contain "|", so split from the right
            arch, seed, split, severity = name[len("pred|"):].rsplit("|", 3)
            raw = np.asarray(data[name], dtype=np.float64)
            if kind == "logits":
                raw = raw - raw.max(axis=1, keepdims=True)
                e = np.exp(raw)
                raw = e / e.sum(axis=1, keepdims=True)
            items.append((StoreKey(arch, int(seed), split, int(severity)),
                          PredictionMatrix(raw)))
        store.put_many(items)
    return store
