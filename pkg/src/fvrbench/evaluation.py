"""Top-K matching metrics for reconstructed images.

Every query ends in exactly one outcome: a hit (some returned entry belongs
to the true identity), a false-only result (entries returned, none correct)
or no match (threshold filtered everything). Rates share one denominator,
so they always sum to one.
"""

import csv
import json
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from ._validation import check_images
from .matchdb import build_db, subsample_identities

HIT = "hit"
FALSE_ONLY = "false_only"
NO_MATCH = "no_match"

REPORT_FIELDS = ["K", "N", "tpr", "fpr", "no_match", "dup_fp", "n_queries", "inv_id", "test_id"]


@dataclass(frozen=True)
class QueryOutcome:
    kind: str
    identities: tuple = ()  # distinct false identities in rank order, FALSE_ONLY only

    def __post_init__(self):
        if self.kind not in (HIT, FALSE_ONLY, NO_MATCH):
            raise ValueError(f"unknown outcome kind {self.kind!r}")
        if self.kind == FALSE_ONLY and not self.identities:
            raise ValueError("a false-only outcome needs at least one matched identity")

    @property
    def first_false(self):
        return self.identities[0] if self.kind == FALSE_ONLY else None


def classify_outcome(m, true_identity):
    identities = m.identities if hasattr(m, "identities") else list(m)
    if not identities:
        return QueryOutcome(NO_MATCH)
    if true_identity in identities:
        return QueryOutcome(HIT)
    return QueryOutcome(FALSE_ONLY, tuple(dict.fromkeys(identities)))


def duplicate_fp_rate(outcomes):
    """Share of false-only outcomes whose top-ranked false identity repeats.

    ``1 - distinct(first false identities) / #false_only``; 0 when there are
    no false-only outcomes.
    """
    firsts = [o.first_false for o in outcomes if o.kind == FALSE_ONLY]
    if not firsts:
        return 0.0
    return float(1 - Fraction(len(set(firsts)), len(firsts)))


@dataclass(frozen=True)
class EvalReport:
    K: int
    N: int
    n_hit: int
    n_false_only: int
    n_no_match: int
    duplicate_fp_rate: float
    inversion_extractor_id: str = ""
    test_extractor_id: str = ""

    @property
    def n_queries(self):
        return self.n_hit + self.n_false_only + self.n_no_match

    @property
    def tpr(self):
        return self.n_hit / self.n_queries

    @property
    def fpr(self):
        return self.n_false_only / self.n_queries

    @property
    def no_match_rate(self):
        return self.n_no_match / self.n_queries

    def fractions(self):
        n = self.n_queries
        return Fraction(self.n_hit, n), Fraction(self.n_false_only, n), Fraction(self.n_no_match, n)

    def row(self):
        return {
            "K": self.K,
            "N": self.N,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "no_match": self.no_match_rate,
            "dup_fp": self.duplicate_fp_rate,
            "n_queries": self.n_queries,
            "inv_id": self.inversion_extractor_id,
            "test_id": self.test_extractor_id,
        }

    def to_dict(self):
        d = asdict(self)
        d.update(tpr=self.tpr, fpr=self.fpr, no_match_rate=self.no_match_rate,
                 n_queries=self.n_queries, dup_fp_rank_rule="top-ranked false identity")
        return d


def evaluate(outcomes, K, N, inversion_extractor_id="", test_extractor_id=""):
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("cannot evaluate an empty outcome list")
    kinds = [o.kind for o in outcomes]
    return EvalReport(
        K=int(K),
        N=int(N),
        n_hit=kinds.count(HIT),
        n_false_only=kinds.count(FALSE_ONLY),
        n_no_match=kinds.count(NO_MATCH),
        duplicate_fp_rate=duplicate_fp_rate(outcomes),
        inversion_extractor_id=inversion_extractor_id,
        test_extractor_id=test_extractor_id,
    )


def sweep(recons, db, extractor, Ks, Ns, seed=0, inversion_extractor_id=""):
    """Evaluate reconstructions over a K x N grid.

    ``recons`` is a sequence of ``(image, true_label)``. Each image is passed
    once through ``extractor`` (the test model F'). For every N the database
    is subsampled once, with all true labels retained, and that subsample is
    shared by every K, which makes tpr exactly non-decreasing in K.

    Returns a dict mapping ``(K, N)`` to :class:`EvalReport`.
    """
    recons = list(recons)
    if not recons:
        raise ValueError("no reconstructions to evaluate")
    images = check_images(np.stack([np.asarray(r[0]) for r in recons]))
    truths = [str(r[1]) for r in recons]
    feats = extractor(images)
    test_id = getattr(extractor, "name", db.extractor_id)
    Ks = [int(k) for k in Ks]
    k_max = max(Ks)
    grid = {}
    for N in Ns:
        sub = subsample_identities(db, int(N), must_include=set(truths), seed=seed)
        results = sub.query_many(feats, k_max)
        for K in Ks:
            outcomes = [
                classify_outcome([m.identity for m in res.matches[:K]], truth)
                for res, truth in zip(results, truths)
            ]
            grid[(K, int(N))] = evaluate(outcomes, K, N, inversion_extractor_id, test_id)
    return grid


def transfer_grid(inversion_extractors, test_extractors, datasets, reconstruct, K=25, N=None,
                  metric="cosine", threshold=None, seed=0):
    """Cross-extractor evaluation grid.

    Parameters
    ----------
    inversion_extractors, test_extractors : dict
        Name to black-box handle. Reconstructions are made against the
        inversion handle and judged through the test handle.
    datasets : dict
        Name to ``(enrolled, probes)`` galleries. Probe images are the
        private originals whose features get leaked and inverted.
    reconstruct : callable
        ``reconstruct(handle, target_vectors) -> image stack``.
    N : int, optional
        Enrolled identities; defaults to ``min(1000, available)``.

    Returns
    -------
    dict mapping ``(inv_id, test_id, dataset_id)`` to :class:`EvalReport`.
    """
    if not inversion_extractors or not test_extractors or not datasets:
        raise ValueError("transfer grid needs at least one entry on every axis")
    grid = {}
    for d_id, (enrolled, probes) in datasets.items():
        for inv_id, inv in inversion_extractors.items():
            targets = inv(probes.images)
            images = reconstruct(inv, targets)
            recons = list(zip(images, probes.labels))
            for test_id, test in test_extractors.items():
                db = build_db(enrolled, test, metric=metric, threshold=threshold,
                              extractor_id=test_id)
                n = min(1000, len(db.identity_labels)) if N is None else N
                cell = sweep(recons, db, test, [K], [n], seed=seed,
                             inversion_extractor_id=inv_id)[(K, n)]
                grid[(inv_id, test_id, d_id)] = EvalReport(
                    **{**asdict(cell), "test_extractor_id": test_id})
    return grid


def write_reports_csv(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in reports:
            row = r.row()
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_reports_json(reports, path):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_plot_data(reports, path, axis):
    """Long-format plot data: one row per (series, x, metric).

    ``axis="K"`` gives tpr/fpr-vs-K series (one per N), ``axis="N"`` gives
    tpr/fpr-vs-N series (one per K).
    """
    other = "N" if axis == "K" else "K"
    rows = []
    for r in reports:
        d = r.row()
        series = f"{d['inv_id']}->{d['test_id']} {other}={d[other]}"
        for metric in ("tpr", "fpr", "no_match"):
            rows.append((series, d[axis], metric, d[metric]))
    rows.sort(key=lambda t: (t[0], t[1], t[2]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["series", axis, "metric", "value"])
        for series, x, metric, value in rows:
            writer.writerow([series, x, metric, repr(float(value))])
