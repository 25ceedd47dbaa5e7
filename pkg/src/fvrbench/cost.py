"""Query-count formulas and tiered cloud pricing for reconstruction attacks.

Money is handled as exact fractions and rounded once, half-up, to integer
cents per line item.
"""

import csv
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from math import inf

import yaml

WEBFACE_IMAGES = 475_137


class ScheduleError(ValueError):
    pass


def _exact(x):
    if isinstance(x, Fraction):
        return x
    return Fraction(str(x))


def to_cents(amount):
    """Round an exact USD amount half-up to integer cents."""
    q = Decimal(amount.numerator) / Decimal(amount.denominator) * 100
    return int(q.quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PriceSchedule:
    """Tiered per-1000-query prices plus a monthly storage rate.

    ``tiers`` is a sequence of ``(upper_bound_queries, price_per_1000)``
    with strictly increasing bounds; the last bound must be ``inf``.
    """

    tiers: tuple
    storage_rate: Fraction = Fraction(0)
    name: str = ""

    def __post_init__(self):
        if not self.tiers:
            raise ScheduleError(f"schedule {self.name!r}: no tiers")
        tiers = []
        prev = 0
        for i, tier in enumerate(self.tiers):
            try:
                bound, price = tier
                bound = inf if bound is None or bound == inf else int(bound)
                price = _exact(price)
            except (TypeError, ValueError) as exc:
                raise ScheduleError(f"schedule {self.name!r}: malformed tier {i}: {tier!r}") from exc
            if price < 0:
                raise ScheduleError(f"schedule {self.name!r}: tier {i} has negative price")
            if bound <= prev:
                raise ScheduleError(
                    f"schedule {self.name!r}: tier {i} bound {bound} not above previous {prev}"
                )
            tiers.append((bound, price))
            prev = bound
        if tiers[-1][0] != inf:
            raise ScheduleError(f"schedule {self.name!r}: last tier {len(tiers) - 1} must be unbounded")
        rate = _exact(self.storage_rate)
        if rate < 0:
            raise ScheduleError(f"schedule {self.name!r}: negative storage rate")
        object.__setattr__(self, "tiers", tuple(tiers))
        object.__setattr__(self, "storage_rate", rate)


def training_queries(epochs, dataset_images):
    if epochs < 0 or dataset_images < 0:
        raise ValueError("epochs and dataset_images must be >= 0")
    return int(epochs) * int(dataset_images)


def blob_queries(iterations, candidates):
    if iterations < 0 or candidates < 0:
        raise ValueError("iterations and candidates must be >= 0")
    return 1 + int(iterations) * int(candidates)


def query_cost_exact(queries, s):
    if queries < 0:
        raise ValueError("queries must be >= 0")
    total = Fraction(0)
    lower = 0
    for bound, price in s.tiers:
        n = min(queries, bound) - lower
        if n <= 0:
            break
        total += Fraction(int(n)) * price / 1000
        lower = bound
    return total


def price_queries(queries, s):
    """Tiered query cost in USD (rounded to the cent)."""
    return to_cents(query_cost_exact(queries, s)) / 100


def storage_cost_exact(images, months, s):
    if images < 0 or months < 0:
        raise ValueError("images and months must be >= 0")
    return Fraction(int(images)) / 1000 * s.storage_rate * _exact(months)


def price_storage(images, months, s):
    return to_cents(storage_cost_exact(images, months, s)) / 100


@dataclass(frozen=True)
class MethodSpec:
    label: str
    queries: int
    images: int = 0
    months: float = 0.0
    formula_queries: int = None
    # schedule name -> {"query_cost": usd, "storage_cost": usd}
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CostLine:
    method: str
    schedule: str
    queries: int
    query_cents: int
    storage_images: int
    storage_months: float
    storage_cents: int
    formula_queries: int = None
    overridden: tuple = ()

    @property
    def total_cents(self):
        return self.query_cents + self.storage_cents

    @property
    def query_cost(self):
        return self.query_cents / 100

    @property
    def storage_cost(self):
        return self.storage_cents / 100

    @property
    def total(self):
        return self.total_cents / 100


def cost_line(spec, schedule_name, s):
    over = spec.overrides.get(schedule_name, {})
    if "query_cost" in over:
        q_cents = to_cents(_exact(over["query_cost"]))
    else:
        q_cents = to_cents(query_cost_exact(spec.queries, s))
    if "storage_cost" in over:
        s_cents = to_cents(_exact(over["storage_cost"]))
    else:
        s_cents = to_cents(storage_cost_exact(spec.images, spec.months, s))
    return CostLine(spec.label, schedule_name, int(spec.queries), q_cents, int(spec.images),
                    float(spec.months), s_cents, spec.formula_queries, tuple(sorted(over)))


def cost_report(specs, schedules):
    """One :class:`CostLine` per (method, schedule), methods in input order."""
    specs = list(specs)
    if not specs:
        raise ValueError("cost_report needs at least one method")
    return [cost_line(spec, name, s) for spec in specs for name, s in schedules.items()]


# Tier schedules fitted to the published Azure / AWS cost columns.
AZURE = PriceSchedule(
    tiers=((1_000_000, "1.00"), (5_000_000, "0.80"), (inf, "0.06")),
    storage_rate=Fraction(0),
    name="azure",
)
AWS = PriceSchedule(
    tiers=((1_000_000, "1.00"), (10_000_000, "0.80"), (inf, "0.06")),
    storage_rate=Fraction("0.01"),
    name="aws",
)
DEFAULT_SCHEDULES = {"azure": AZURE, "aws": AWS}

PUBLISHED_METHODS = (
    MethodSpec("Eigenfaces (single image)", 200_000, 0, 0.0,
               formula_queries=blob_queries(2000, 64)),
    MethodSpec("Naive (model training)", 4_571_370, WEBFACE_IMAGES, 9.0,
               formula_queries=training_queries(5, WEBFACE_IMAGES)),
    MethodSpec("NBNet (model training)", 38_010_960, WEBFACE_IMAGES, 37.0,
               formula_queries=training_queries(80, WEBFACE_IMAGES)),
    MethodSpec("Vec2Face (model training)", 15_000_000, 0, 0.0,
               formula_queries=15_000_000, overrides={"aws": {"storage_cost": "83.75"}}),
)


def _schedule_from_mapping(name, m):
    if not isinstance(m, dict) or "tiers" not in m:
        raise ScheduleError(f"schedule {name!r}: expected a mapping with 'tiers'")
    tiers = []
    for i, t in enumerate(m["tiers"]):
        if not isinstance(t, dict) or "price_per_1000" not in t:
            raise ScheduleError(f"schedule {name!r}: malformed tier {i}: {t!r}")
        tiers.append((t.get("up_to"), t["price_per_1000"]))
    return PriceSchedule(tuple(tiers), m.get("storage_rate", 0), name)


def load_cost_config(path):
    """Read schedules (and optionally methods) from a YAML file.

    Returns ``(schedules, methods)``; ``methods`` is None when the file does
    not list any.
    """
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ScheduleError(f"{path}: invalid YAML: {exc}") from exc
    if "schedules" not in data:
        raise ScheduleError(f"{path}: missing 'schedules' section")
    schedules = {name: _schedule_from_mapping(name, m) for name, m in data["schedules"].items()}
    methods = None
    if data.get("methods"):
        methods = [
            MethodSpec(m["label"], int(m["queries"]), int(m.get("images", 0)),
                       float(m.get("months", 0.0)), m.get("formula_queries"),
                       dict(m.get("overrides") or {}))
            for m in data["methods"]
        ]
    return schedules, methods


def dump_cost_config(schedules, methods, path):
    def tier(b, p):
        return {"up_to": None if b == inf else b, "price_per_1000": str(p)}

    data = {
        "schedules": {
            name: {"storage_rate": str(s.storage_rate),
                   "tiers": [tier(b, p) for b, p in s.tiers]}
            for name, s in schedules.items()
        },
        "methods": [
            {"label": m.label, "queries": m.queries, "images": m.images, "months": m.months,
             "formula_queries": m.formula_queries, "overrides": m.overrides}
            for m in methods
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def _usd(cents):
    return f"${cents // 100:,}.{cents % 100:02d}"


def format_cost_table(lines):
    """Plain-text table: one row per method, one cost column per schedule."""
    methods = list(dict.fromkeys(l.method for l in lines))
    schedules = list(dict.fromkeys(l.schedule for l in lines))
    by_key = {(l.method, l.schedule): l for l in lines}
    header = ["FVR Method", "# Queries", "(formula)"] + [f"{s} cost" for s in schedules]
    rows = []
    for m in methods:
        first = by_key[(m, schedules[0])]
        row = [m, f"{first.queries:,}",
               "-" if first.formula_queries is None else f"{first.formula_queries:,}"]
        for s in schedules:
            l = by_key[(m, s)]
            cell = _usd(l.query_cents)
            if l.storage_cents:
                cell = f"{cell} (queries) + {_usd(l.storage_cents)} (database) = {_usd(l.total_cents)}"
            if l.overridden:
                cell += " *"
            row.append(cell)
        rows.append(row)
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    fmt = lambda r: " | ".join(c.ljust(w) if i == 0 else c.rjust(w)
                               for i, (c, w) in enumerate(zip(r, widths)))
    out = [fmt(header), "-+-".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    if any(l.overridden for l in lines):
        out.append("* includes a configured per-row override")
    return "\n".join(out) + "\n"


COST_FIELDS = ["method", "schedule", "queries", "formula_queries", "query_cost", "storage_images",
               "storage_months", "storage_cost", "total", "overridden"]


def write_cost_csv(lines, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COST_FIELDS)
        for l in lines:
            writer.writerow([
                l.method, l.schedule, l.queries,
                "" if l.formula_queries is None else l.formula_queries,
                f"{l.query_cents / 100:.2f}", l.storage_images, repr(l.storage_months),
                f"{l.storage_cents / 100:.2f}", f"{l.total_cents / 100:.2f}",
                ";".join(l.overridden),
            ])
