"""The four on-disk pipeline stages: prepare, attack, evaluate, cost.

Every stage reads the previous stage's artifacts from ``<output_dir>`` and
writes its own sub-directory. All randomness comes from config seeds, and
no artifact records timings, absolute paths or the worker count, so reruns
are byte-identical.
"""

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .corpus import (
    hold_out_probes,
    load_gallery,
    load_manifest_gallery,
    split_gallery,
    write_manifest,
)
from .cost import (
    DEFAULT_SCHEDULES,
    PUBLISHED_METHODS,
    MethodSpec,
    cost_report,
    format_cost_table,
    load_cost_config,
    write_cost_csv,
)
from .evaluation import (
    REPORT_FIELDS,
    sweep,
    write_plot_data,
    write_reports_csv,
    write_reports_json,
)
from .extractor import EigenfaceModel, QueryLedger, counted, fit_eigenfaces
from .matchdb import build_db
from .reconstruct import (
    BlobReconstructor,
    cosine_similarity,
    fit_linear_decoder,
    reconstruct_batch,
)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    pass


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _stage_dir(cfg, name):
    d = cfg.output_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _require(path, stage):
    if not Path(path).exists():
        raise StageError(f"missing {path}; run '{stage}' first")
    return path


def write_vectors_csv(labels, V, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "identity"] + [f"v_{i}" for i in range(V.shape[1])])
        for i, (label, v) in enumerate(zip(labels, V)):
            writer.writerow([i, label] + [repr(float(x)) for x in v])


def read_vectors_csv(path):
    labels, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            labels.append(row[1])
            rows.append([float(x) for x in row[2:]])
    return labels, np.array(rows, dtype=np.float64)


def prepare(cfg):
    """Load and split the gallery, hold out probes, fit the three eigenface models."""
    cfg.validate()
    out = _stage_dir(cfg, "prepare")
    g = load_gallery(cfg.gallery_path, cfg.target_size)
    attacker, victim = split_gallery(g, cfg["split"]["attacker_fraction"], cfg["split"]["seed"])
    enrolled, probes = hold_out_probes(victim, cfg["probes"]["count"], cfg["probes"]["seed"])
    ex = cfg["extractor"]
    try:
        victim_model = fit_eigenfaces(enrolled, ex["victim_components"])
        prior_model = fit_eigenfaces(attacker, ex["prior_components"])
        test_model = fit_eigenfaces(enrolled, ex["test_components"])
    except ValueError as exc:
        raise StageError(f"fitting eigenfaces failed: {exc}") from exc

    write_manifest(attacker, out / "attacker.csv")
    write_manifest(enrolled, out / "victim_enrolled.csv")
    write_manifest(probes, out / "probes.csv")
    victim_model.save(out / "victim.eig")
    prior_model.save(out / "prior.eig")
    test_model.save(out / "test.eig")
    # the leaked feature vectors the attacker will invert
    write_vectors_csv(probes.labels, victim_model.transform(probes.images), out / "targets.csv")

    files = ["attacker.csv", "victim_enrolled.csv", "probes.csv", "victim.eig", "prior.eig",
             "test.eig", "targets.csv"]
    manifest = {
        "gallery_root": str(cfg["gallery"]["path"]),
        "attacker_identities": len(attacker.identity_labels),
        "victim_identities": len(victim.identity_labels),
        "attacker_images": len(attacker),
        "victim_enrolled_images": len(enrolled),
        "probes": len(probes),
        "files": {f: sha256(out / f) for f in files},
    }
    write_json(manifest, out / "manifest.json")
    log.info("prepare: %d attacker / %d victim identities", manifest["attacker_identities"],
             manifest["victim_identities"])
    return manifest


def load_prepared(cfg):
    d = cfg.output_dir / "prepare"
    _require(d / "manifest.json", "prepare")
    root = cfg.gallery_path
    return {
        "attacker": load_manifest_gallery(d / "attacker.csv", root),
        "enrolled": load_manifest_gallery(d / "victim_enrolled.csv", root),
        "probes": load_manifest_gallery(d / "probes.csv", root),
        "victim": EigenfaceModel.load(d / "victim.eig"),
        "prior": EigenfaceModel.load(d / "prior.eig"),
        "test": EigenfaceModel.load(d / "test.eig"),
        "targets": read_vectors_csv(d / "targets.csv"),
    }


def attack(cfg, jobs=1):
    """Reconstruct every leaked target vector through the counted victim model."""
    cfg.validate()
    art = load_prepared(cfg)
    out = _stage_dir(cfg, "attack")
    labels, targets = art["targets"]
    r = cfg["reconstructor"]
    ledger = QueryLedger()
    victim_bb = counted(art["victim"], ledger, name="victim")

    fit_queries = 0
    if r["method"] == "blob":
        rec = BlobReconstructor(
            victim_bb, art["prior"], iterations=r["iterations"],
            candidates_per_iter=r["candidates_per_iter"], sigma_range=r["sigma_range"],
            amplitude_max=r["amplitude_max"], loss=r["loss"],
            normalize_every=r["normalize_every"], seed=r["seed"],
        ).fit()
    else:
        rec = fit_linear_decoder(art["attacker"], victim_bb, r["ridge_lambda"])
        fit_queries = ledger.count
    results = reconstruct_batch(rec, list(targets), jobs=jobs)

    per_target = []
    for i, (res, label, v) in enumerate(zip(results, labels, targets)):
        res.save(out / f"recon_{i:04d}", config=cfg["reconstructor"])
        per_target.append({
            "index": i,
            "identity": label,
            "queries_used": res.queries_used,
            "accepted_blobs": res.accepted_blobs,
            "final_loss": res.loss_trace[-1] if res.loss_trace else None,
            "cosine_to_target": cosine_similarity(art["victim"].extract(res.image), v),
        })
    finals = [t["final_loss"] for t in per_target if t["final_loss"] is not None]
    summary = {
        "method": r["method"],
        "n_targets": len(results),
        "ledger_total": ledger.count,
        "decoder_fit_queries": fit_queries,
        "queries_per_target": [t["queries_used"] for t in per_target],
        "final_loss": (
            {"mean": float(np.mean(finals)), "min": float(np.min(finals)),
             "max": float(np.max(finals))} if finals else None
        ),
        "targets": per_target,
        "config": cfg.stable_dict()["reconstructor"],
    }
    write_json(summary, out / "summary.json")
    return summary


def load_reconstructions(cfg):
    d = cfg.output_dir / "attack"
    summary = json.loads(Path(_require(d / "summary.json", "attack")).read_text())
    images = [np.load(d / f"recon_{i:04d}.npy") for i in range(summary["n_targets"])]
    labels = [t["identity"] for t in summary["targets"]]
    return images, labels, summary


def evaluate(cfg, jobs=1):
    """K x N sweeps through the victim model and an independent test model."""
    cfg.validate()
    art = load_prepared(cfg)
    images, labels, _ = load_reconstructions(cfg)
    out = _stage_dir(cfg, "evaluate")
    m = cfg["match"]
    s = cfg["sweep"]
    enrolled = art["enrolled"]
    n_ids = len(enrolled.identity_labels)
    bad = [N for N in s["Ns"] if N > n_ids or N < len(set(labels))]
    if bad:
        raise StageError(
            f"sweep.Ns {bad} outside [{len(set(labels))}, {n_ids}] enrolled victim identities"
        )
    recons = list(zip(images, labels))
    tests = {"victim": art["victim"], "test": art["test"]}

    def run(test_id):
        handle = counted(tests[test_id], QueryLedger(), name=test_id)
        db = build_db(enrolled, handle, metric=m["metric"], threshold=cfg.threshold,
                      extractor_id=test_id)
        grid = sweep(recons, db, handle, s["Ks"], s["Ns"], seed=s["seed"],
                     inversion_extractor_id="victim")
        t = cfg["transfer"]
        n_t = min(1000, n_ids) if t["N"] is None else t["N"]
        cell = sweep(recons, db, handle, [t["K"]], [n_t], seed=s["seed"],
                     inversion_extractor_id="victim")[(t["K"], n_t)]
        return grid, cell

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(run, tests))
    else:
        outs = [run(t) for t in tests]

    reports, transfer = [], []
    for grid, cell in outs:
        reports.extend(grid[k] for k in sorted(grid, key=lambda kn: (kn[1], kn[0])))
        transfer.append(cell)
    for r in reports + transfer:
        if sum(r.fractions()) != 1:
            raise StageError(f"rates do not sum to one for K={r.K}, N={r.N}")

    write_reports_csv(reports, out / "reports.csv")
    write_reports_json(reports, out / "reports.json")
    write_plot_data(reports, out / "plot_vs_K.csv", axis="K")
    write_plot_data(reports, out / "plot_vs_N.csv", axis="N")
    write_reports_csv(transfer, out / "transfer.csv")
    write_reports_json(transfer, out / "transfer.json")
    (out / "summary.txt").write_text(format_reports(reports + transfer))
    return reports, transfer


def format_reports(reports):
    lines = [" ".join(f"{f:>8}" for f in REPORT_FIELDS)]
    for r in reports:
        d = r.row()
        lines.append(" ".join(
            f"{d[f]:>8.3f}" if isinstance(d[f], float) else f"{d[f]:>8}" for f in REPORT_FIELDS))
    return "\n".join(lines) + "\n"


def cost(cfg, queries_from_ledger=None):
    """Price the attack methods under every configured schedule."""
    sched_path = cfg["cost"]["schedules"]
    schedules, methods = DEFAULT_SCHEDULES, None
    if sched_path is not None:
        schedules, methods = load_cost_config(cfg.resolve(sched_path))
    methods = list(methods or PUBLISHED_METHODS)
    if queries_from_ledger is not None:
        summary = json.loads(Path(queries_from_ledger).read_text())
        per = set(summary["queries_per_target"])
        if len(per) != 1:
            raise StageError(f"{queries_from_ledger}: per-target query counts differ: {sorted(per)}")
        q = per.pop()
        methods = [
            MethodSpec(mm.label, q, mm.images, mm.months, mm.formula_queries, mm.overrides)
            if mm.label.startswith("Eigenfaces") else mm
            for mm in methods
        ]
    lines = cost_report(methods, schedules)
    out = _stage_dir(cfg, "cost")
    write_cost_csv(lines, out / "cost.csv")
    table = format_cost_table(lines)
    (out / "cost.txt").write_text(table)
    return lines, table

