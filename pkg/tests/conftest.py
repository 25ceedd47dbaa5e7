import numpy as np
import pytest

from fvrbench.corpus import Gallery, hold_out_probes, save_gallery_tree, split_gallery
from fvrbench.extractor import fit_eigenfaces
from fvrbench.synth import make_synthetic_gallery


@pytest.fixture(scope="session")
def faces():
    """240 synthetic identities x 5 images at 32x32."""
    return make_synthetic_gallery(240, 5, (32, 32), seed=0)


@pytest.fixture(scope="session")
def world(faces):
    """Attacker/victim split with held-out probes and fitted victim + prior models."""
    attacker, victim = split_gallery(faces, 0.5, seed=7)
    enrolled, probes = hold_out_probes(victim, 20, seed=11)
    return {
        "attacker": attacker,
        "victim": victim,
        "enrolled": enrolled,
        "probes": probes,
        "F": fit_eigenfaces(enrolled, 16),
        "prior": fit_eigenfaces(attacker, 32),
    }


@pytest.fixture
def random_gallery():
    rng = np.random.default_rng(123)
    return Gallery(rng.uniform(size=(10, 16, 16)), [f"id{i}" for i in range(10)])


@pytest.fixture
def tiny_tree(tmp_path):
    g = make_synthetic_gallery(2, 3, (40, 48), seed=5)
    root = tmp_path / "tree"
    save_gallery_tree(g, root)
    return root


# Acceptance verdicts, filled by tests/test_acceptance.py and printed at the end.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {name} ({detail})")
