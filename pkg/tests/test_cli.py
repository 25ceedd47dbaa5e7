import csv
import json

import numpy as np
import pytest

from fvrbench.cli import main
from fvrbench.extractor import EigenfaceModel


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def gallery40(tmp_path_factory):
    root = tmp_path_factory.mktemp("g40")
    assert run("synth", root / "gallery", "--identities", 40, "--images-per-identity", 4,
               "--size", 24, 24, "--seed", 1) == 0
    assert run("init-config", root / "cfg.yaml", "--gallery", root / "gallery") == 0
    return root


def sets(root, out, **extra):
    base = {
        "output_dir": out,
        "gallery.size": "[24,24]",
        "probes.count": 6,
        "extractor.victim_components": 8,
        "extractor.prior_components": 12,
        "extractor.test_components": 10,
        "reconstructor.iterations": 20,
        "reconstructor.candidates_per_iter": 8,
        "sweep.Ks": "[1,5,10]",
        "sweep.Ns": "[10,20]",
    }
    base.update(extra)
    args = ["-c", root / "cfg.yaml"]
    for k, v in base.items():
        args += ["--set", f"{k}={v}"]
    return args


def test_synth_and_init_config(gallery40):
    dirs = sorted(p.name for p in (gallery40 / "gallery").iterdir())
    assert len(dirs) == 40 and len(list((gallery40 / "gallery" / dirs[0]).iterdir())) == 4
    assert (gallery40 / "schedules.yaml").is_file()


def test_prepare_split_and_determinism(gallery40, tmp_path):
    assert run("prepare", *sets(gallery40, tmp_path / "a")) == 0
    assert run("prepare", *sets(gallery40, tmp_path / "b")) == 0
    ma = json.loads((tmp_path / "a/prepare/manifest.json").read_text())
    mb = json.loads((tmp_path / "b/prepare/manifest.json").read_text())
    assert ma["files"] == mb["files"]
    assert (ma["attacker_identities"], ma["victim_identities"]) == (20, 20)
    att = {r["identity"] for r in csv.DictReader(open(tmp_path / "a/prepare/attacker.csv"))}
    vic = {r["identity"] for r in csv.DictReader(open(tmp_path / "a/prepare/victim_enrolled.csv"))}
    assert not att & vic


def test_missing_gallery_is_validation_error(gallery40, tmp_path, capsys):
    missing = tmp_path / "nowhere"
    code = run("prepare", *sets(gallery40, tmp_path / "x"), "--set", f"gallery.path={missing}")
    assert code == 1
    err = capsys.readouterr().err
    assert "kind=validation" in err and str(missing) in err


def test_bad_override_is_validation_error(gallery40, tmp_path, capsys):
    assert run("prepare", *sets(gallery40, tmp_path / "x"), "--set", "nope.key=1") == 1
    assert "unknown config key" in capsys.readouterr().err


def test_attack_before_prepare_is_runtime_error(gallery40, tmp_path, capsys):
    assert run("attack", *sets(gallery40, tmp_path / "empty")) == 2
    assert "kind=runtime" in capsys.readouterr().err


def test_attack_zero_iterations_returns_prior_mean(gallery40, tmp_path):
    args = sets(gallery40, tmp_path, **{"reconstructor.iterations": 0})
    assert run("prepare", *args) == 0
    assert run("attack", *args) == 0
    prior = EigenfaceModel.load(tmp_path / "prepare/prior.eig")
    summary = json.loads((tmp_path / "attack/summary.json").read_text())
    assert summary["ledger_total"] == summary["n_targets"] == 6
    for i in range(6):
        np.testing.assert_array_equal(np.load(tmp_path / f"attack/recon_{i:04d}.npy"),
                                      np.clip(prior.mean_, 0, 1))


@pytest.fixture(scope="module")
def full_run(gallery40, tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    assert run("run", *sets(gallery40, out)) == 0
    return out


def test_attack_ledger_and_loss_stats(full_run):
    summary = json.loads((full_run / "attack/summary.json").read_text())
    assert summary["ledger_total"] == 6 * (1 + 20 * 8)
    assert summary["queries_per_target"] == [161] * 6
    finals = []
    for i in range(6):
        rows = list(csv.DictReader(open(full_run / f"attack/recon_{i:04d}_loss.csv")))
        trace = [float(r["loss"]) for r in rows]
        assert len(trace) == 21 and trace == sorted(trace, reverse=True)
        finals.append(trace[-1])
    assert summary["final_loss"]["mean"] == pytest.approx(np.mean(finals), abs=1e-12)
    assert summary["final_loss"]["min"] == min(finals)
    assert summary["final_loss"]["max"] == max(finals)


def test_evaluate_outputs_conserve(full_run):
    rows = list(csv.DictReader(open(full_run / "evaluate/reports.csv")))
    assert len(rows) == 2 * 3 * 2  # two test models x Ks x Ns
    for r in rows:
        total = float(r["tpr"]) + float(r["fpr"]) + float(r["no_match"])
        assert abs(total - 1) <= 1e-12
    for N in ("10", "20"):
        tprs = [float(r["tpr"]) for r in rows if r["N"] == N and r["test_id"] == "victim"]
        assert tprs == sorted(tprs)
    transfer = list(csv.DictReader(open(full_run / "evaluate/transfer.csv")))
    assert {r["test_id"] for r in transfer} == {"victim", "test"}
    assert all(r["N"] == "20" and r["K"] == "25" for r in transfer)


def test_evaluate_rerun_is_byte_identical(gallery40, full_run):
    before = {p.name: p.read_bytes() for p in (full_run / "evaluate").iterdir()}
    assert run("evaluate", *sets(gallery40, full_run), "--jobs", 3) == 0
    after = {p.name: p.read_bytes() for p in (full_run / "evaluate").iterdir()}
    assert before == after


def test_grid_cells_equal_single_cell_runs(gallery40, full_run, tmp_path):
    rows = {(r["K"], r["N"], r["test_id"]): r
            for r in csv.DictReader(open(full_run / "evaluate/reports.csv"))}
    single = tmp_path / "single"
    # reuse the prepared and attacked artifacts
    for stage in ("prepare", "attack"):
        (single / stage).mkdir(parents=True)
        for p in (full_run / stage).iterdir():
            (single / stage / p.name).write_bytes(p.read_bytes())
    for K, N in [(5, 10), (10, 20)]:
        assert run("evaluate", *sets(gallery40, single, **{"sweep.Ks": f"[{K}]",
                                                         "sweep.Ns": f"[{N}]"})) == 0
        (r_single,) = [r for r in csv.DictReader(open(single / "evaluate/reports.csv"))
                       if r["test_id"] == "victim"]
        assert r_single == rows[(str(K), str(N), "victim")]


def test_sweep_n_out_of_range(gallery40, full_run, capsys):
    assert run("evaluate", *sets(gallery40, full_run, **{"sweep.Ns": "[500]"})) == 2
    assert "sweep.Ns" in capsys.readouterr().err


def test_cost_defaults(gallery40, tmp_path, capsys):
    assert run("cost", *sets(gallery40, tmp_path)) == 0
    out = capsys.readouterr().out
    assert "$200.00" in out and "$3,857.10" in out and "$4,800.00" in out
    rows = list(csv.DictReader(open(tmp_path / "cost/cost.csv")))
    assert len(rows) == 8


def test_cost_zero_price_tier(gallery40, tmp_path):
    sched = tmp_path / "free.yaml"
    sched.write_text("schedules:\n  free:\n    storage_rate: 0\n    tiers:\n"
                     "      - {up_to: .inf, price_per_1000: 0}\n")
    assert run("cost", *sets(gallery40, tmp_path, **{"cost.schedules": sched})) == 0
    rows = list(csv.DictReader(open(tmp_path / "cost/cost.csv")))
    assert rows and all(float(r["total"]) == 0 for r in rows)


def test_cost_from_ledger(gallery40, full_run, tmp_path):
    assert run("cost", *sets(gallery40, full_run), "--queries-from-ledger") == 0
    rows = list(csv.DictReader(open(full_run / "cost/cost.csv")))
    eig = [r for r in rows if r["method"].startswith("Eigenfaces")]
    assert eig and all(int(r["queries"]) == 161 for r in eig)
    assert all(float(r["query_cost"]) == pytest.approx(0.16) for r in eig)
