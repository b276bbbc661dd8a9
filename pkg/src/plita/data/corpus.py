"""On-disk corpus layout and the in-memory record types.

A corpus directory holds one manifest plus one signal file and one label file
per record:

    manifest.json                  version, global meta, per-record entries
    signals/<record_id>.f32        little-endian float32 samples, 100 Hz
    labels/<record_id>.csv         strip_index,label rows on the 10 s grid

The manifest entry for a record carries its subject, sample count, sampling
rate, provenance chain, metadata and the sha256 of the signal file; readers
verify count and checksum so silent truncation or bitrot surfaces as a
:class:`CorpusError` naming the record, not as garbage training data.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..signal_prep import CleanSignal

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


class CorpusError(RuntimeError):
    pass


@dataclass
class Recording:
    subject_id: str
    record_id: str
    signal: CleanSignal
    labels: np.ndarray  # one int per 10 s strip; empty array when unlabeled
    meta: dict = field(default_factory=dict)

    @property
    def n_strips(self):
        return int(self.signal.samples.shape[0] // int(10 * self.signal.fs))


def select_dynamic_records(records, threshold=0.8):
    """Keep records whose most frequent label covers at most `threshold` of
    strips. Near-constant records carry no usable within-record dynamics for
    a sequence task, so they are filtered before probing."""
    kept = []
    for rec in records:
        labels = np.asarray(rec.labels)
        if labels.size == 0:
            raise ValueError(f"record {rec.record_id} has no labels")
        modal = np.bincount(labels).max() / labels.size
        if modal <= threshold:
            kept.append(rec)
    return kept


class SubjectPairIndex:
    """Subject -> (recording, recording), validated to exactly two each."""

    def __init__(self, records):
        by_subject = {}
        for r in records:
            by_subject.setdefault(r.subject_id, []).append(r)
        bad = {s: len(v) for s, v in by_subject.items() if len(v) != 2}
        if bad:
            raise CorpusError(
                f"every subject needs exactly 2 records, got counts {bad}"
            )
        self.pairs = {
            s: tuple(sorted(v, key=lambda r: r.record_id)) for s, v in by_subject.items()
        }
        self.subjects = sorted(self.pairs)

    def __len__(self):
        return len(self.subjects)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_corpus(out_dir, records, global_meta=None):
    """Write records + manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "signals").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        sig_rel = f"signals/{rec.record_id}.f32"
        sig_path = out / sig_rel
        samples = np.ascontiguousarray(rec.signal.samples, dtype="<f4")
        sig_path.write_bytes(samples.tobytes())
        lab_rel = f"labels/{rec.record_id}.csv"
        with open(out / lab_rel, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["strip_index", "label"])
            for i, lab in enumerate(np.asarray(rec.labels).tolist()):
                w.writerow([i, int(lab)])
        entries.append(
            {
                "subject_id": rec.subject_id,
                "record_id": rec.record_id,
                "signal_file": sig_rel,
                "label_file": lab_rel,
                "n_samples": int(samples.shape[0]),
                "fs": float(rec.signal.fs),
                "provenance": list(rec.signal.provenance),
                "sha256": _sha256(sig_path),
                "meta": rec.meta,
            }
        )
    manifest = {
        "format": "plita-corpus",
        "version": FORMAT_VERSION,
        "meta": global_meta or {},
        "records": entries,
    }
    man_path = out / MANIFEST_NAME
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return man_path


def read_corpus(corpus_dir, verify_checksums=True):
    """Load a corpus directory; returns (list[Recording], manifest dict)."""
    root = Path(corpus_dir)
    man_path = root / MANIFEST_NAME
    if not man_path.is_file():
        raise CorpusError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(man_path.read_text())
    except json.JSONDecodeError as e:
        raise CorpusError(f"manifest {man_path} is not valid JSON: {e}") from e
    if manifest.get("format") != "plita-corpus":
        raise CorpusError(f"manifest {man_path} has unknown format tag {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise CorpusError(
            f"corpus version {manifest.get('version')} unsupported (reader is v{FORMAT_VERSION})"
        )
    records = []
    for ent in manifest["records"]:
        rid = ent["record_id"]
        sig_path = root / ent["signal_file"]
        if not sig_path.is_file():
            raise CorpusError(f"record {rid}: signal file {sig_path} is missing")
        if verify_checksums:
            digest = _sha256(sig_path)
            if digest != ent["sha256"]:
                raise CorpusError(
                    f"record {rid}: checksum mismatch for {sig_path} "
                    f"(manifest {ent['sha256'][:12]}…, file {digest[:12]}…)"
                )
        samples = np.frombuffer(sig_path.read_bytes(), dtype="<f4")
        if samples.shape[0] != ent["n_samples"]:
            raise CorpusError(
                f"record {rid}: {samples.shape[0]} samples on disk, "
                f"manifest says {ent['n_samples']}"
            )
        labels = _read_labels(root / ent["label_file"], rid)
        n_strips = int(samples.shape[0] // int(10 * ent["fs"]))
        if labels.shape[0] and labels.shape[0] != n_strips:
            raise CorpusError(
                f"record {rid}: {labels.shape[0]} labels for {n_strips} strips"
            )
        records.append(
            Recording(
                subject_id=ent["subject_id"],
                record_id=rid,
                signal=CleanSignal(
                    samples=samples.astype(np.float32),
                    fs=float(ent["fs"]),
                    provenance=list(ent.get("provenance", [])),
                ),
                labels=labels,
                meta=dict(ent.get("meta", {})),
            )
        )
    return records, manifest


def _read_labels(path, rid):
    if not path.is_file():
        return np.empty(0, dtype=np.int64)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["strip_index", "label"]:
            raise CorpusError(
                f"record {rid}: label file header {reader.fieldnames} "
                f"!= ['strip_index', 'label']"
            )
        rows = [(int(r["strip_index"]), int(r["label"])) for r in reader]
    rows.sort()
    if [i for i, _ in rows] != list(range(len(rows))):
        raise CorpusError(f"record {rid}: label strip indices are not 0..{len(rows)-1}")
    return np.asarray([lab for _, lab in rows], dtype=np.int64)
