"""Experiment configuration: a YAML file plus ``--set key=value`` overrides."""

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "output_dir": "runs/demo",
    "gallery": {"path": None, "size": [32, 32]},
    "synthetic": {"identities": 240, "images_per_identity": 5, "seed": 0},
    "split": {"attacker_fraction": 0.5, "seed": 7},
    "probes": {"count": 20, "seed": 11},
    "extractor": {"victim_components": 16, "prior_components": 32, "test_components": 24},
    "reconstructor": {
        "method": "blob",
        "iterations": 2000,
        "candidates_per_iter": 64,
        "sigma_range": None,
        "amplitude_max": 0.5,
        "loss": "cosine_distance",
        "normalize_every": 1,
        "seed": 0,
        "ridge_lambda": 1e-3,
    },
    "match": {"mode": "local", "threshold": None, "metric": "cosine"},
    "sweep": {"Ks": [5, 10, 15, 20, 25, 30, 35, 40], "Ns": [25, 50, 100], "seed": 3},
    "transfer": {"K": 25, "N": None},
    "cost": {"schedules": None},
}


def _merge(base, update, prefix=""):
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{prefix}{key}' must be a mapping")
            _merge(base[key], value, f"{prefix}{key}.")
        else:
            base[key] = value
    return base


def apply_override(data, assignment):
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key '{key}'")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key '{key}'")
    try:
        node[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for '{key}': {exc}") from exc
    return data


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.data[key]

    @property
    def output_dir(self):
        return self.resolve(self.data["output_dir"])

    @property
    def gallery_path(self):
        p = self.data["gallery"]["path"]
        return None if p is None else self.resolve(p)

    @property
    def target_size(self):
        w, h = self.data["gallery"]["size"]
        return int(w), int(h)

    @property
    def threshold(self):
        return self.data["match"]["threshold"] if self.data["match"]["mode"] != "local" else None

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def stable_dict(self):
        """Config echo for artifacts: no paths that depend on where it ran."""
        d = copy.deepcopy(self.data)
        d.pop("output_dir", None)
        return d

    def validate(self, require_gallery=True):
        d = self.data
        if require_gallery:
            if d["gallery"]["path"] is None:
                raise ConfigError("gallery.path is not set")
            if not self.gallery_path.is_dir():
                raise ConfigError(f"gallery path does not exist: {self.gallery_path}")
        size = d["gallery"]["size"]
        if not (isinstance(size, list) and len(size) == 2 and all(int(s) > 0 for s in size)):
            raise ConfigError("gallery.size must be [width, height]")
        frac = d["split"]["attacker_fraction"]
        if not isinstance(frac, (int, float)) or not 0 < frac < 1:
            raise ConfigError("split.attacker_fraction must be in (0, 1)")
        for section in ("split", "probes", "reconstructor", "sweep", "synthetic"):
            if not isinstance(d[section].get("seed"), int):
                raise ConfigError(f"{section}.seed must be an integer")
        for k in ("victim_components", "prior_components", "test_components"):
            if not isinstance(d["extractor"][k], int) or d["extractor"][k] < 1:
                raise ConfigError(f"extractor.{k} must be a positive integer")
        r = d["reconstructor"]
        if r["method"] not in ("blob", "linear"):
            raise ConfigError("reconstructor.method must be 'blob' or 'linear'")
        if not isinstance(r["iterations"], int) or r["iterations"] < 0:
            raise ConfigError("reconstructor.iterations must be a non-negative integer")
        if not isinstance(r["candidates_per_iter"], int) or r["candidates_per_iter"] < 1:
            raise ConfigError("reconstructor.candidates_per_iter must be a positive integer")
        m = d["match"]
        if m["mode"] not in ("local", "commercial-sim"):
            raise ConfigError("match.mode must be 'local' or 'commercial-sim'")
        if m["mode"] == "commercial-sim" and m["threshold"] is None:
            raise ConfigError("match.threshold is required in commercial-sim mode")
        if m["metric"] not in ("cosine", "negative_l2"):
            raise ConfigError("match.metric must be 'cosine' or 'negative_l2'")
        s = d["sweep"]
        if not s["Ks"] or not s["Ns"] or not all(isinstance(k, int) and k >= 1
                                                 for k in s["Ks"] + s["Ns"]):
            raise ConfigError("sweep.Ks and sweep.Ns must be non-empty lists of positive integers")
        sched = d["cost"]["schedules"]
        if sched is not None and not self.resolve(sched).is_file():
            raise ConfigError(f"cost schedule file does not exist: {self.resolve(sched)}")
        return self


def load_config(path=None, overrides=()):
    data = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file does not exist: {path}")
        with open(path) as fh:
            try:
                loaded = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(data, loaded)
        base_dir = path.resolve().parent
    for item in overrides:
        apply_override(data, item)
    return ExperimentConfig(data, base_dir)


def dump_config(data, path):
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)
