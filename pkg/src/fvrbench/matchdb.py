"""Enrollment database and exact top-K matching.

The database stores one entry per enrolled image. Queries score every entry
(exhaustive scan), order by descending score with ties broken by ascending
entry id, drop entries below the optional threshold and keep the first K.
"""

import csv
import json
from collections import namedtuple
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_vectors

METRICS = ("cosine", "negative_l2")

Match = namedtuple("Match", ["entry_id", "identity", "score"])


class MatchError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    matches: tuple
    k_requested: int

    @property
    def identities(self):
        return [m.identity for m in self.matches]

    def __len__(self):
        return len(self.matches)


@dataclass(frozen=True, eq=False)
class EnrollmentDatabase:
    """Immutable set of labeled feature vectors plus matching semantics.

    ``threshold=None`` is the "local" mode that always returns K matches;
    a float threshold is the "commercial-sim" mode that may return fewer.
    """

    entry_ids: np.ndarray
    labels: tuple
    vectors: np.ndarray
    metric: str = "cosine"
    threshold: float = None
    extractor_id: str = "F"

    def __post_init__(self):
        ids = np.asarray(self.entry_ids, dtype=np.int64)
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 2:
            raise MatchError(f"vectors must be a matrix, got shape {vecs.shape}")
        if not (len(ids) == len(self.labels) == len(vecs)):
            raise MatchError("entry_ids, labels and vectors differ in length")
        if len(np.unique(ids)) != len(ids):
            raise MatchError("entry ids must be unique")
        if not np.all(np.isfinite(vecs)):
            raise MatchError("vectors contain NaN or infinite entries")
        if self.metric not in METRICS:
            raise MatchError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.threshold is not None and not np.isfinite(self.threshold):
            raise MatchError("threshold must be finite")
        ids = ids.copy()
        ids.flags.writeable = False
        vecs = vecs.copy()
        vecs.flags.writeable = False
        object.__setattr__(self, "entry_ids", ids)
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))
        object.__setattr__(self, "vectors", vecs)
        if self.threshold is not None:
            object.__setattr__(self, "threshold", float(self.threshold))
        norms = np.linalg.norm(vecs, axis=1) if len(vecs) else np.zeros(0)
        unit = np.zeros_like(vecs)
        nz = norms > 0
        unit[nz] = vecs[nz] / norms[nz, None]
        object.__setattr__(self, "_unit", unit)

    def __len__(self):
        return len(self.entry_ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def identity_labels(self):
        return sorted(set(self.labels))

    def with_threshold(self, threshold):
        return EnrollmentDatabase(self.entry_ids, self.labels, self.vectors, self.metric,
                                  threshold, self.extractor_id)

    def scores(self, probe):
        """Score of one probe against every entry under the database metric."""
        p = check_vectors(probe, self.dim, name="probe")[0]
        if self.metric == "cosine":
            norm = np.linalg.norm(p)
            if norm == 0:
                return np.zeros(len(self))
            return self._unit @ (p / norm)
        return -np.linalg.norm(self.vectors - p, axis=1)

    def _ranked(self, score_row, K):
        order = np.lexsort((self.entry_ids, -score_row))
        if self.threshold is not None:
            order = order[score_row[order] >= self.threshold]
        order = order[:K]
        return MatchResult(
            tuple(Match(int(self.entry_ids[i]), self.labels[i], float(score_row[i]))
                  for i in order),
            K,
        )

    def query(self, probe, K):
        return query_topk(self, probe, K)

    def query_many(self, probes, K):
        """Top-K for a stack of probes; identical to repeated :func:`query_topk`."""
        return [query_topk(self, p, K) for p in np.asarray(probes, dtype=np.float64)]

    def _check_query(self, K):
        if len(self) == 0:
            raise MatchError("cannot query an empty database")
        if int(K) < 1:
            raise MatchError(f"K must be >= 1, got {K}")

    def save(self, path):
        """Write ``<path>`` (CSV) and ``<path>.json`` (header)."""
        path = Path(path)
        header = {
            "metric": self.metric,
            "threshold": self.threshold,
            "extractor_id": self.extractor_id,
            "M": self.dim,
        }
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["entry_id", "identity"] + [f"v_{i}" for i in range(self.dim)])
            for eid, label, vec in zip(self.entry_ids, self.labels, self.vectors):
                writer.writerow([int(eid), label] + [repr(float(x)) for x in vec])
        with open(f"{path}.json", "w") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(f"{path}.json") as fh:
            header = json.load(fh)
        ids, labels, vecs = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                ids.append(int(row[0]))
                labels.append(row[1])
                vecs.append([float(x) for x in row[2:]])
        vecs = np.array(vecs, dtype=np.float64).reshape(len(ids), header["M"])
        return cls(np.array(ids), labels, vecs, header["metric"], header["threshold"],
                   header["extractor_id"])


def build_db(g, extractor, metric="cosine", threshold=None, extractor_id=None):
    """Enroll every gallery image through ``extractor`` (``len(g)`` queries)."""
    if len(g) == 0:
        raise MatchError("cannot enroll an empty gallery")
    vectors = extractor(g.images)
    if extractor_id is None:
        extractor_id = getattr(extractor, "name", "F")
    return EnrollmentDatabase(np.arange(len(g)), g.labels, vectors, metric, threshold,
                              extractor_id)


def query_topk(db, probe, K):
    db._check_query(K)
    probe = np.asarray(probe, dtype=np.float64)
    if probe.ndim != 1:
        raise MatchError(f"probe must be a single vector, got shape {probe.shape}")
    return db._ranked(db.scores(probe), int(K))


def subsample_identities(db, N, must_include=(), seed=0):
    """Keep every entry of ``must_include`` identities plus ``N - |must_include|`` random others.

    The extra identities are drawn without replacement from the sorted
    remaining labels with ``numpy.random.default_rng(seed)``.
    """
    labels = db.identity_labels
    must = set(must_include)
    missing = must - set(labels)
    if missing:
        raise MatchError(f"must_include identities not enrolled: {sorted(missing)[:5]}")
    if not len(must) <= N <= len(labels):
        raise MatchError(f"N={N} out of range [{len(must)}, {len(labels)}]")
    if N == len(labels):
        return db
    others = [lbl for lbl in labels if lbl not in must]
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(others), size=N - len(must), replace=False)
    keep = must | {others[i] for i in picked}
    mask = np.array([lbl in keep for lbl in db.labels])
    return EnrollmentDatabase(db.entry_ids[mask], [l for l, m in zip(db.labels, mask) if m],
                              db.vectors[mask], db.metric, db.threshold, db.extractor_id)
