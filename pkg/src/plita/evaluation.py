"""Frozen-encoder evaluation: embedding export, probes, feature analysis.

Everything here is read-only over a trained model. ``export_embeddings``
turns a corpus into one row per quality-passing 10 s strip. The probes then
measure what those rows carry: a hinge-loss linear classifier for per-strip
labels, and a small GRU over 30 s strip groups for sequence structure.
``disentangle`` splits features into low/high intra-record variance clusters;
``permutation_importance`` ranks features by the accuracy a trained probe
loses when one column is shuffled.

Protocol rule used throughout: folds are subject-disjoint. Both records of a
subject always land on the same side of any split, so identity leakage can
never inflate a score.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .data.sampling import grid_strips
from .data.synth import make_rng
from .model import GRUHead
from .optim import Adam
from .signal_prep import get_quality_predicate

_STREAM_SEQ = 5 << 48
_STREAM_PERM = 6 << 48

TABLE_MANIFEST = "manifest.json"
TABLE_FORMAT = "plita-embeddings"
TABLE_VERSION = 1


# ---------------------------------------------------------------- table

@dataclass
class EmbeddingTable:
    """One row per strip: feature vector plus where it came from.

    labels hold -1 where the source record carried no annotation. record_meta
    maps record_id to the corpus metadata dict, so per-record attributes (for
    example a subject trait) stay addressable as probe targets.
    """

    vectors: np.ndarray  # [n, d] float32
    subjects: list
    records: list
    strip_index: np.ndarray
    labels: np.ndarray
    record_meta: dict = field(default_factory=dict)
    normalized: bool = False

    def __post_init__(self):
        n = self.vectors.shape[0]
        if not (len(self.subjects) == len(self.records) == n):
            raise ValueError("table metadata length does not match vector count")
        if self.strip_index.shape[0] != n or self.labels.shape[0] != n:
            raise ValueError("table metadata length does not match vector count")

    @property
    def n_rows(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def record_ids(self):
        """Unique record ids in first-appearance order."""
        seen, out = set(), []
        for r in self.records:
            if r not in seen:
                seen.add(r)
                out.append(r)
        return out

    def subject_of(self, record_id):
        for s, r in zip(self.subjects, self.records):
            if r == record_id:
                return s
        raise KeyError(record_id)

    def save(self, path):
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        vec = np.ascontiguousarray(self.vectors, dtype="<f4")
        (out / "vectors.f32").write_bytes(vec.tobytes())
        with open(out / "meta.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["subject_id", "record_id", "strip_index", "label"])
            for i in range(self.n_rows):
                w.writerow(
                    [
                        self.subjects[i],
                        self.records[i],
                        int(self.strip_index[i]),
                        int(self.labels[i]),
                    ]
                )
        manifest = {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "rows": self.n_rows,
            "dim": self.dim,
            "normalized": self.normalized,
            "vectors_file": "vectors.f32",
            "meta_file": "meta.csv",
            "record_meta": self.record_meta,
        }
        with open(out / TABLE_MANIFEST, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        root = Path(path)
        with open(root / TABLE_MANIFEST) as f:
            manifest = json.load(f)
        if manifest.get("format") != TABLE_FORMAT:
            raise ValueError(f"{path} is not an embedding table")
        if manifest["version"] != TABLE_VERSION:
            raise ValueError(f"unsupported table version {manifest['version']}")
        rows, dim = manifest["rows"], manifest["dim"]
        raw = (root / manifest["vectors_file"]).read_bytes()
        if len(raw) != rows * dim * 4:
            raise ValueError(
                f"vector file holds {len(raw)} bytes, expected {rows * dim * 4}"
            )
        vectors = np.frombuffer(raw, dtype="<f4").reshape(rows, dim).copy()
        subjects, records, strip_index, labels = [], [], [], []
        with open(root / manifest["meta_file"], newline="") as f:
            for row in csv.DictReader(f):
                subjects.append(row["subject_id"])
                records.append(row["record_id"])
                strip_index.append(int(row["strip_index"]))
                labels.append(int(row["label"]))
        return cls(
            vectors=vectors,
            subjects=subjects,
            records=records,
            strip_index=np.asarray(strip_index, dtype=np.int64),
            labels=np.asarray(labels, dtype=np.int64),
            record_meta=manifest.get("record_meta", {}),
            normalized=bool(manifest["normalized"]),
        )


def normalize_features(table):
    """Per-feature z-normalization over the whole table (near-constant
    features pass through centered)."""
    x = table.vectors.astype(np.float64)
    sd = x.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return EmbeddingTable(
        vectors=((x - x.mean(axis=0)) / sd).astype(np.float32),
        subjects=list(table.subjects),
        records=list(table.records),
        strip_index=table.strip_index.copy(),
        labels=table.labels.copy(),
        record_meta=dict(table.record_meta),
        normalized=True,
    )


def export_embeddings(pair, records, normalize=False, quality="default", batch_size=64):
    """Run the frozen student encoder over every quality-passing strip.

    Strips come off the fixed 10 s grid; each is variance-normalized by the
    sampler before encoding, matching what training saw.
    """
    predicate = get_quality_predicate(quality) if isinstance(quality, str) else quality
    subjects, rec_ids, strip_idx, labels, chunks = [], [], [], [], []
    record_meta = {}
    for rec in records:
        record_meta[rec.record_id] = dict(rec.meta)
        kept = list(grid_strips(rec, predicate))
        if not kept:
            continue
        x = np.stack([s for _, s in kept])
        for lo in range(0, x.shape[0], batch_size):
            h = pair.encode(x[lo : lo + batch_size])
            chunks.append(h.data.astype(np.float32))
        has_labels = np.asarray(rec.labels).size > 0
        for k, _ in kept:
            subjects.append(rec.subject_id)
            rec_ids.append(rec.record_id)
            strip_idx.append(k)
            labels.append(int(rec.labels[k]) if has_labels else -1)
    if chunks:
        vectors = np.concatenate(chunks, axis=0)
    else:
        vectors = np.zeros((0, pair.enc_cfg.dim), dtype=np.float32)
    table = EmbeddingTable(
        vectors=vectors,
        subjects=subjects,
        records=rec_ids,
        strip_index=np.asarray(strip_idx, dtype=np.int64),
        labels=np.asarray(labels, dtype=np.int64),
        record_meta=record_meta,
    )
    return normalize_features(table) if normalize else table


def resolve_labels(table, field_name="label"):
    """Per-row int labels: the strip annotations, or a per-record meta field."""
    if field_name == "label":
        return np.asarray(table.labels, dtype=np.int64)
    out = np.empty(table.n_rows, dtype=np.int64)
    for i, rid in enumerate(table.records):
        meta = table.record_meta.get(rid, {})
        if field_name not in meta:
            raise KeyError(
                f"record {rid} has no meta field {field_name!r}"
                f" (available: {sorted(meta)})"
            )
        out[i] = int(meta[field_name])
    return out


# ---------------------------------------------------------------- metrics

def macro_f1(y_true, y_pred, classes):
    """Unweighted mean of per-class F1; absent classes score 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    scores = []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def _midranks(x):
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(x.shape[0], dtype=np.float64)
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positive):
    """Rank-statistic AUC with midranks for ties; nan when one class is absent."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    r = _midranks(np.asarray(scores, dtype=np.float64))
    return float((r[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ovr_auc(scores, y_true, classes):
    """Macro one-vs-rest AUC over the classes present in y_true."""
    vals = []
    for i, c in enumerate(classes):
        a = binary_auc(scores[:, i], y_true == c)
        if not np.isnan(a):
            vals.append(a)
    return float(np.mean(vals)) if vals else float("nan")


# ---------------------------------------------------------------- probes

class HingeClassifier:
    """One-vs-rest linear max-margin classifier.

    Full-batch subgradient descent on L2-regularized hinge loss, zero init,
    no shuffling — fully deterministic for a given training set.
    """

    def __init__(self, l2=1e-3, epochs=200, lr=1e-2):
        self.l2 = l2
        self.epochs = epochs
        self.lr = lr
        self.classes_ = None
        self.W = None
        self.b = None

    def fit(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        self.classes_ = np.unique(y)
        n, d = x.shape
        c = self.classes_.shape[0]
        targets = np.where(y[:, None] == self.classes_[None, :], 1.0, -1.0)
        self.W = np.zeros((d, c))
        self.b = np.zeros(c)
        for _ in range(self.epochs):
            margin = targets * (x @ self.W + self.b)
            g = np.where(margin < 1.0, -targets, 0.0) / n
            self.W -= self.lr * (x.T @ g + 2.0 * self.l2 * self.W)
            self.b -= self.lr * g.sum(axis=0)
        return self

    def decision(self, x):
        return np.asarray(x, dtype=np.float64) @ self.W + self.b

    def predict(self, x):
        return self.classes_[np.argmax(self.decision(x), axis=1)]


def _standardize(train, other):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    return (train - mu) / sd, (other - mu) / sd


@dataclass
class FoldMetrics:
    name: str
    test_subjects: list
    n_test: int
    accuracy: float
    macro_f1: float
    auc: float

    def to_dict(self):
        return {
            "fold": self.name,
            "test_subjects": list(self.test_subjects),
            "n_test": self.n_test,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auc": self.auc,
        }


@dataclass
class ProbeReport:
    folds: list
    skipped: list = field(default_factory=list)
    degenerate: bool = False

    def _mean(self, attr):
        if not self.folds:
            return float("nan")
        return float(np.mean([getattr(f, attr) for f in self.folds]))

    @property
    def accuracy(self):
        return self._mean("accuracy")

    @property
    def macro_f1(self):
        return self._mean("macro_f1")

    @property
    def auc(self):
        vals = [f.auc for f in self.folds if not np.isnan(f.auc)]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auc": self.auc,
            "degenerate": self.degenerate,
            "folds": [f.to_dict() for f in self.folds],
            "skipped": list(self.skipped),
        }


def _labeled_view(table, label_field):
    y = resolve_labels(table, label_field)
    keep = y >= 0
    x = table.vectors.astype(np.float64)[keep]
    subjects = np.asarray(table.subjects, dtype=object)[keep]
    records = np.asarray(table.records, dtype=object)[keep]
    return x, y[keep], subjects, records


def _eval_fold(name, x_tr, y_tr, x_te, y_te, test_subjects, l2, epochs, lr):
    x_tr, x_te = _standardize(x_tr, x_te)
    clf = HingeClassifier(l2=l2, epochs=epochs, lr=lr).fit(x_tr, y_tr)
    pred = clf.predict(x_te)
    return FoldMetrics(
        name=name,
        test_subjects=sorted(set(test_subjects)),
        n_test=int(y_te.shape[0]),
        accuracy=float(np.mean(pred == y_te)),
        macro_f1=macro_f1(y_te, pred, clf.classes_),
        auc=ovr_auc(clf.decision(x_te), y_te, clf.classes_),
    )


def _subject_folds(subjects, y, folds):
    """Deal subjects into folds, stratified by each subject's majority label.

    Within a label stratum subjects go round-robin, with the fold counter
    running across strata; a label that marks whole subjects (a trait) then
    spreads over every fold instead of segregating into some of them.
    """
    subs = sorted(set(subjects))
    maj = {}
    for s in subs:
        labs = y[subjects == s]
        maj[s] = int(np.bincount(labs).argmax())
    strata = {}
    for s in subs:
        strata.setdefault(maj[s], []).append(s)
    groups = [[] for _ in range(folds)]
    i = 0
    for lab in sorted(strata):
        for s in strata[lab]:
            groups[i % folds].append(s)
            i += 1
    return [g for g in groups if g]


def linear_probe(table, label_field="label", folds=4, l2=1e-3, epochs=200, lr=1e-2):
    """Subject-disjoint k-fold linear probe on frozen embeddings.

    Fold assignment is a pure function of the table: subjects are sorted,
    stratified by majority label, and dealt round-robin. Folds whose training
    side still collapses to a single class are skipped with a warning.
    """
    x, y, subjects, _ = _labeled_view(table, label_field)
    if np.unique(y).shape[0] < 2:
        raise ValueError("probe needs at least 2 classes in the labeled rows")
    groups = _subject_folds(subjects, y, folds)
    report = ProbeReport(folds=[])
    for gi, group in enumerate(groups):
        te = np.isin(subjects, group)
        tr = ~te
        name = f"fold{gi}"
        if not te.any() or not tr.any():
            report.skipped.append((name, "empty side"))
            continue
        if np.unique(y[tr]).shape[0] < 2:
            warnings.warn(f"{name}: single-class training fold, skipped")
            report.skipped.append((name, "single-class training fold"))
            continue
        report.folds.append(
            _eval_fold(name, x[tr], y[tr], x[te], y[te], subjects[te], l2, epochs, lr)
        )
    return report


def leave_one_out(table, probe=None, label_field="label"):
    """Hold out each record once; train on rows from all other subjects.

    The held-out record's sibling record (same subject) is excluded from the
    training side too, keeping folds subject-disjoint. probe overrides the
    default hinge evaluation; it gets (x_tr, y_tr, x_te, y_te) and returns an
    (accuracy, macro_f1, auc) triple.
    """
    x, y, subjects, records = _labeled_view(table, label_field)
    report = ProbeReport(folds=[])
    for rid in table.record_ids():
        te = records == rid
        if not te.any():
            report.skipped.append((rid, "no labeled rows"))
            continue
        subj = subjects[te][0]
        tr = subjects != subj
        if not tr.any():
            report.skipped.append((rid, "no training subjects"))
            continue
        if np.unique(y[tr]).shape[0] < 2:
            warnings.warn(f"{rid}: single-class training fold, skipped")
            report.skipped.append((rid, "single-class training fold"))
            continue
        if probe is None:
            fold = _eval_fold(rid, x[tr], y[tr], x[te], y[te], [subj], 1e-3, 200, 1e-2)
        else:
            acc, f1, auc = probe(x[tr], y[tr], x[te], y[te])
            fold = FoldMetrics(rid, [subj], int(te.sum()), acc, f1, auc)
        report.folds.append(fold)
    return report


# ---------------------------------------------------------------- sequences

def sequence_groups(table, group=3):
    """Stack consecutive strip embeddings into fixed-length groups.

    Group g of a record covers strip indices [g*group, (g+1)*group); it is
    kept only when every member strip survived quality filtering and carries
    a label. The group label is the majority strip label, ties to the lower
    class id. Records too short for a single group contribute nothing.
    """
    feats, labels, rec_of, subj_of = [], [], [], []
    strip_arr = np.asarray(table.strip_index)
    rec_arr = np.asarray(table.records, dtype=object)
    for rid in table.record_ids():
        rows = np.flatnonzero(rec_arr == rid)
        by_idx = {int(strip_arr[r]): r for r in rows}
        subj = table.subjects[rows[0]]
        top = max(by_idx) + 1
        for start in range(0, top - group + 1, group):
            members = [by_idx.get(start + j) for j in range(group)]
            if any(m is None for m in members):
                continue
            labs = table.labels[members]
            if (labs < 0).any():
                continue
            feats.append(table.vectors[members])
            labels.append(int(np.bincount(labs).argmax()))
            rec_of.append(rid)
            subj_of.append(subj)
    if feats:
        return (
            np.stack(feats).astype(np.float32),
            np.asarray(labels, dtype=np.int64),
            np.asarray(rec_of, dtype=object),
            np.asarray(subj_of, dtype=object),
        )
    d = table.dim
    return (
        np.zeros((0, group, d), dtype=np.float32),
        np.zeros(0, dtype=np.int64),
        np.asarray([], dtype=object),
        np.asarray([], dtype=object),
    )


def _train_gru(feats, y_idx, n_classes, rng, epochs, hidden, lr, batch_size=32):
    head = GRUHead(feats.shape[2], n_classes, rng, hidden=hidden)
    opt = Adam(head.params(), lr=lr, weight_decay=0.0)
    n = feats.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = order[lo : lo + batch_size]
            logits = head(ag.Tensor(feats[sel]))
            p = ag.softmax(logits)
            picked = p[np.arange(sel.shape[0]), y_idx[sel]]
            loss = ag.mean(ag.log(ag.clamp_min(picked, 1e-12))) * (-1.0)
            opt.zero_grad()
            ag.backward(loss, head.params())
            opt.step()
    return head


def sequence_probe(table, group=3, epochs=5, hidden=64, lr=1e-2, seed=0):
    """GRU probe over consecutive-strip groups, leave-one-record-out.

    The encoder stays frozen (the table is its output); only the GRU head and
    its linear classifier train, briefly, per fold. A corpus whose groups all
    share one label still runs but the report is flagged degenerate.
    """
    feats, y, rec_of, subj_of = sequence_groups(table, group)
    if feats.shape[0] == 0:
        raise ValueError("no complete labeled strip groups in the table")
    classes = np.unique(y)
    y_idx = np.searchsorted(classes, y)
    report = ProbeReport(folds=[], degenerate=classes.shape[0] < 2)
    for fold_i, rid in enumerate(dict.fromkeys(rec_of.tolist())):
        te = rec_of == rid
        tr = subj_of != subj_of[te][0]
        if not tr.any():
            report.skipped.append((rid, "no training subjects"))
            continue
        rng = make_rng(seed, _STREAM_SEQ + fold_i)
        head = _train_gru(
            feats[tr], y_idx[tr], classes.shape[0], rng, epochs, hidden, lr
        )
        logits = head(ag.Tensor(feats[te])).data
        pred = classes[np.argmax(logits, axis=1)]
        report.folds.append(
            FoldMetrics(
                name=rid,
                test_subjects=[subj_of[te][0]],
                n_test=int(te.sum()),
                accuracy=float(np.mean(pred == y[te])),
                macro_f1=macro_f1(y[te], pred, classes),
                auc=ovr_auc(logits, y[te], classes),
            )
        )
    return report


# ---------------------------------------------------------------- analysis

@dataclass
class FeatureClusterReport:
    dim: int
    n_records: int
    cluster_size: int
    record_ids: list
    variances: np.ndarray  # [n_records, dim]
    invariant_sets: dict
    tempo_variant_sets: dict
    invariant_ratio: np.ndarray
    tempo_variant_ratio: np.ndarray
    top_invariant: list
    top_tempo_variant: list

    def to_dict(self):
        return {
            "dim": self.dim,
            "n_records": self.n_records,
            "cluster_size": self.cluster_size,
            "record_ids": list(self.record_ids),
            "invariant_ratio": self.invariant_ratio.tolist(),
            "tempo_variant_ratio": self.tempo_variant_ratio.tolist(),
            "top_invariant": [[int(f), float(r)] for f, r in self.top_invariant],
            "top_tempo_variant": [
                [int(f), float(r)] for f, r in self.top_tempo_variant
            ],
        }


def _top_ratios(ratio, k):
    d = ratio.shape[0]
    order = np.lexsort((np.arange(d), -ratio))
    return [(int(f), float(ratio[f])) for f in order[: min(k, d)]]


def disentangle(table, top_k=20):
    """Per-record variance clustering of embedding features.

    For each record, the floor(0.33*d) lowest-variance features form its
    invariant cluster and the floor(0.33*d) highest its tempo-variant
    cluster. A feature's appearance ratio is the fraction of records whose
    cluster contains it; features that land in the same cluster for almost
    every record are the stable axes of the representation.
    """
    if not table.normalized:
        raise ValueError(
            "disentangle needs per-feature normalized embeddings"
            " (export with normalize=True)"
        )
    d = table.dim
    if d < 3:
        raise ValueError(f"disentangle needs at least 3 features, got {d}")
    rec_ids = table.record_ids()
    if len(rec_ids) < 2:
        raise ValueError("disentangle needs at least 2 records")
    m = int(np.floor(0.33 * d))
    rec_arr = np.asarray(table.records, dtype=object)
    variances = np.empty((len(rec_ids), d))
    inv_sets, tv_sets = {}, {}
    inv_count = np.zeros(d)
    tv_count = np.zeros(d)
    for i, rid in enumerate(rec_ids):
        rows = table.vectors[rec_arr == rid].astype(np.float64)
        var = rows.var(axis=0)
        variances[i] = var
        order = np.argsort(var, kind="stable")
        inv = np.sort(order[:m])
        tv = np.sort(order[d - m :]) if m else np.empty(0, dtype=np.int64)
        inv_sets[rid] = inv
        tv_sets[rid] = tv
        inv_count[inv] += 1
        tv_count[tv] += 1
    inv_ratio = inv_count / len(rec_ids)
    tv_ratio = tv_count / len(rec_ids)
    return FeatureClusterReport(
        dim=d,
        n_records=len(rec_ids),
        cluster_size=m,
        record_ids=rec_ids,
        variances=variances,
        invariant_sets=inv_sets,
        tempo_variant_sets=tv_sets,
        invariant_ratio=inv_ratio,
        tempo_variant_ratio=tv_ratio,
        top_invariant=_top_ratios(inv_ratio, top_k),
        top_tempo_variant=_top_ratios(tv_ratio, top_k),
    )


@dataclass
class ImportanceReport:
    baseline_accuracy: float
    features: np.ndarray
    drops: np.ndarray
    ranking: np.ndarray
    overlap: dict = None

    def to_dict(self):
        out = {
            "baseline_accuracy": self.baseline_accuracy,
            "features": self.features.tolist(),
            "drops": self.drops.tolist(),
            "ranking": self.ranking.tolist(),
        }
        if self.overlap is not None:
            out["overlap"] = self.overlap
        return out


def permutation_importance(
    table,
    label_field="label",
    probe=None,
    features=None,
    n_shuffles=10,
    seed=0,
    clusters=None,
    top_k=5,
):
    """Accuracy drop per shuffled feature column, on a held-out subject split.

    Subjects are sorted; even positions train, odd positions test. When no
    probe is supplied a hinge classifier is fitted on the (standardized)
    training side; a supplied probe must expose predict() over the table's
    raw feature space and shuffling then happens in that space. With a
    cluster report attached, the overlap of the top_k most important features
    with each top-20 cluster is reported next to its random expectation.
    """
    x, y, subjects, _ = _labeled_view(table, label_field)
    subs = sorted(set(subjects))
    if len(subs) < 2:
        raise ValueError("permutation importance needs at least 2 subjects")
    tr = np.isin(subjects, subs[0::2])
    te = ~tr
    if np.unique(y[tr]).shape[0] < 2:
        raise ValueError("training split has a single class")
    if probe is None:
        x_tr, x_te = _standardize(x[tr], x[te])
        probe = HingeClassifier().fit(x_tr, y[tr])
    else:
        x_te = x[te]
    y_te = y[te]
    baseline = float(np.mean(probe.predict(x_te) == y_te))
    d = table.dim
    feats = np.arange(d) if features is None else np.asarray(list(features))
    if feats.size and (feats.min() < 0 or feats.max() >= d):
        raise ValueError(f"feature ids must lie in [0, {d})")
    rng = make_rng(seed, _STREAM_PERM)
    drops = np.empty(feats.shape[0])
    work = x_te.copy()
    for i, f in enumerate(feats):
        col = work[:, f].copy()
        accs = []
        for _ in range(n_shuffles):
            work[:, f] = col[rng.permutation(col.shape[0])]
            accs.append(np.mean(probe.predict(work) == y_te))
        work[:, f] = col
        drops[i] = baseline - float(np.mean(accs))
    ranking = feats[np.lexsort((feats, -drops))]
    overlap = None
    if clusters is not None:
        top = set(int(f) for f in ranking[:top_k])
        inv = set(f for f, _ in clusters.top_invariant)
        tv = set(f for f, _ in clusters.top_tempo_variant)
        overlap = {
            "top_k": int(min(top_k, ranking.shape[0])),
            "invariant": len(top & inv),
            "tempo_variant": len(top & tv),
            "expected_random": top_k * len(inv) / d if d else 0.0,
        }
    return ImportanceReport(
        baseline_accuracy=baseline,
        features=feats,
        drops=drops,
        ranking=ranking,
        overlap=overlap,
    )
