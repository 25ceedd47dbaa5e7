"""Command-line entry point: ``fvrbench <command> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Errors are
printed to stderr as one ``fvrbench: error: kind=<kind> message=<json string>``
line.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, DEFAULTS, dump_config, load_config
from .corpus import GalleryError, save_gallery_tree
from .cost import DEFAULT_SCHEDULES, PUBLISHED_METHODS, ScheduleError, dump_cost_config
from .synth import make_synthetic_gallery

VALIDATION_ERRORS = (ConfigError, GalleryError, ScheduleError, FileNotFoundError)


def _add_common(p):
    p.add_argument("-c", "--config", help="YAML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker threads for reconstruction/evaluation (results do not depend on it)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fvrbench",
        description="Feature-vector reconstruction attack simulator and evaluation harness",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic face gallery tree")
    p.add_argument("out", help="output directory (<out>/<identity>/<nnnn>.pgm)")
    p.add_argument("--identities", type=int, default=DEFAULTS["synthetic"]["identities"])
    p.add_argument("--images-per-identity", type=int,
                   default=DEFAULTS["synthetic"]["images_per_identity"])
    p.add_argument("--size", type=int, nargs=2, default=[32, 32], metavar=("W", "H"))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("init-config", help="write a default experiment config and cost schedules")
    p.add_argument("out", help="config path to write")
    p.add_argument("--gallery", help="gallery path to put in the config")

    for name, help_text in [
        ("prepare", "split the gallery and fit extractor models"),
        ("attack", "reconstruct leaked feature vectors"),
        ("evaluate", "top-K matching sweeps over the reconstructions"),
        ("run", "prepare, attack, evaluate and cost in sequence"),
    ]:
        _add_common(sub.add_parser(name, help=help_text))

    p = sub.add_parser("cost", help="price the attacks under tiered schedules")
    _add_common(p)
    p.add_argument("--queries-from-ledger", nargs="?", const="", default=None, metavar="SUMMARY",
                   help="take the Eigenfaces query count from an attack summary.json "
                        "(default: <output_dir>/attack/summary.json)")
    return parser


def _ledger_path(cfg, arg):
    if arg is None:
        return None
    return Path(arg) if arg else cfg.output_dir / "attack" / "summary.json"


def _run(args):
    if args.command == "synth":
        g = make_synthetic_gallery(args.identities, args.images_per_identity, tuple(args.size),
                                   args.seed)
        save_gallery_tree(g, args.out)
        print(f"wrote {len(g)} images of {len(g.identity_labels)} identities to {args.out}")
        return
    if args.command == "init-config":
        out = Path(args.out)
        data = json.loads(json.dumps(DEFAULTS))
        data["gallery"]["path"] = args.gallery
        data["cost"]["schedules"] = "schedules.yaml"
        out.parent.mkdir(parents=True, exist_ok=True)
        dump_config(data, out)
        dump_cost_config(DEFAULT_SCHEDULES, PUBLISHED_METHODS, out.parent / "schedules.yaml")
        print(f"wrote {out} and {out.parent / 'schedules.yaml'}")
        return

    cfg = load_config(args.config, args.overrides)
    jobs = max(1, args.jobs)
    if args.command in ("prepare", "run"):
        m = pipeline.prepare(cfg)
        print(f"prepare: {m['attacker_identities']} attacker / {m['victim_identities']} "
              f"victim identities, {m['probes']} probes")
    if args.command in ("attack", "run"):
        s = pipeline.attack(cfg, jobs=jobs)
        print(f"attack: {s['n_targets']} targets, {s['ledger_total']} victim queries")
    if args.command in ("evaluate", "run"):
        reports, transfer = pipeline.evaluate(cfg, jobs=jobs)
        print(pipeline.format_reports(reports + transfer), end="")
    if args.command in ("cost", "run"):
        ledger = _ledger_path(cfg, getattr(args, "queries_from_ledger", None))
        _, table = pipeline.cost(cfg, queries_from_ledger=ledger)
        print(table, end="")


def _error(kind, exc):
    print(f"fvrbench: error: kind={kind} message={json.dumps(str(exc))}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except VALIDATION_ERRORS as exc:
        _error("validation", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level CLI boundary
        _error("runtime", exc)
        if args.verbose:
            raise
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
