"""Manifests, dataset statistics and the Mixed-N builder.

A Mixed-N training set keeps every real record and tops each class up to N
with synthetic records, drawn in sorted-id order. Classes that already have
N or more real records get no synthetic records and are never truncated.
"""

import json
from collections import Counter
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal

from .errors import ArgumentError, CapacityError, DataError, IntegrityError
from .serialize import atomic_write

LABELS = ("normal", "crackle", "wheeze", "both")
SPLITS = ("train", "test")
SOURCES = ("real", "synthetic")
FIELDS = ("id", "path", "label", "split", "source")

ICBHI_TRAIN = {"normal": 2063, "crackle": 1215, "wheeze": 501, "both": 363}
ICBHI_TEST = {"normal": 1579, "crackle": 649, "wheeze": 385, "both": 143}
MIXED_SIZES = (500, 800, 1000, 1500, 2000, 3000, 5000)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    path: str
    label: str
    split: str = "train"
    source: str = "real"

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"record {self.id!r}: unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"record {self.id!r}: unknown split {self.split!r}")
        if self.source not in SOURCES:
            raise DataError(f"record {self.id!r}: unknown source {self.source!r}")
        if self.split == "test" and self.source == "synthetic":
            raise IntegrityError(f"record {self.id!r}: synthetic records cannot be in the test split")

    @property
    def label_index(self):
        return LABELS.index(self.label)

    @property
    def domain_index(self):
        return SOURCES.index(self.source)


@dataclass(frozen=True)
class MixPolicy:
    n_target: int

    def __post_init__(self):
        if self.n_target < 1:
            raise ArgumentError(f"Mixed-N target must be >= 1, got {self.n_target}")


@dataclass
class DatasetStats:
    counts: dict  # label -> split -> source -> n

    @property
    def totals(self):
        return {
            split: sum(self.counts[l][split][s] for l in LABELS for s in SOURCES) for split in SPLITS
        }

    def share(self, split):
        """Percentage of each class within ``split``."""
        total = self.totals[split]
        return {
            l: (100.0 * sum(self.counts[l][split].values()) / total if total else 0.0) for l in LABELS
        }

    def synthetic_ratio(self, split="train"):
        """Per class ``synthetic / (real + synthetic) * 100``, rounded half-up to 2 dp."""
        return {
            l: ratio_percent(self.counts[l][split]["synthetic"], sum(self.counts[l][split].values()))
            for l in LABELS
        }

    def to_json(self):
        return {
            "counts": self.counts,
            "totals": self.totals,
            "share": {split: self.share(split) for split in SPLITS},
            "synthetic_ratio": self.synthetic_ratio(),
        }


def ratio_percent(part, whole):
    if whole == 0:
        return 0.0
    value = Decimal(part * 100) / Decimal(whole)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def parse_manifest(lines, source_name="<manifest>"):
    records = []
    seen = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{source_name}:{lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or set(obj) != set(FIELDS):
            got = sorted(obj) if isinstance(obj, dict) else type(obj).__name__
            raise DataError(f"{source_name}:{lineno}: expected fields {list(FIELDS)}, got {got}")
        if not all(isinstance(obj[k], str) for k in FIELDS):
            raise DataError(f"{source_name}:{lineno}: all fields must be strings")
        try:
            record = SampleRecord(**obj)
        except DataError as exc:
            raise DataError(f"{source_name}:{lineno}: {exc}") from None
        if record.id in seen:
            raise IntegrityError(
                f"duplicate record id {record.id!r} on lines {seen[record.id]} and {lineno}"
            )
        seen[record.id] = lineno
        records.append(record)
    return records


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, str(path))


def dump_manifest(records):
    return "".join(json.dumps(asdict(r)) + "\n" for r in records)


def write_manifest(path, records):
    atomic_write(path, dump_manifest(records).encode("utf-8"))


def icbhi_stats(records):
    counter = Counter((r.label, r.split, r.source) for r in records)
    counts = {
        l: {sp: {so: counter[(l, sp, so)] for so in SOURCES} for sp in SPLITS} for l in LABELS
    }
    return DatasetStats(counts)


def build_mixed(real, synth_pool, policy):
    """Real records plus just enough synthetic training records per class.

    Only training-split real records count toward N; test records pass
    through unchanged. Returns ``(records, stats)``.
    """
    for r in real:
        if r.source != "real":
            raise IntegrityError(f"record {r.id!r} in the real set is tagged {r.source!r}")
    for r in synth_pool:
        if r.source != "synthetic" or r.split != "train":
            raise IntegrityError(f"pool record {r.id!r} must be a synthetic training record")

    real_counts = Counter(r.label for r in real if r.split == "train")
    pool = {l: sorted((r for r in synth_pool if r.label == l), key=lambda r: r.id) for l in LABELS}
    added = []
    for label in LABELS:
        need = max(0, policy.n_target - real_counts[label])
        if len(pool[label]) < need:
            raise CapacityError(label, need - len(pool[label]))
        added.extend(pool[label][:need])
    taken = {r.id for r in real}
    clash = [r.id for r in added if r.id in taken]
    if clash:
        raise IntegrityError(f"synthetic ids collide with real ids: {clash[:5]}")
    mixed = list(real) + added
    return mixed, icbhi_stats(mixed)


def _placeholder_records(counts, source, prefix):
    return [
        SampleRecord(f"{prefix}-{label}-{i:05d}", "", label, "train", source)
        for label in LABELS
        for i in range(counts.get(label, 0))
    ]


def synth_ratio_table(policies=MIXED_SIZES, real_counts=ICBHI_TRAIN):
    """Synthetic percentage per class (rows) for each Mixed-N (columns)."""
    real = _placeholder_records(real_counts, "real", "real")
    table = {label: [] for label in LABELS}
    for n in policies:
        need = {l: max(0, n - real_counts.get(l, 0)) for l in LABELS}
        pool = _placeholder_records(need, "synthetic", "syn")
        _, stats = build_mixed(real, pool, MixPolicy(n))
        for label, value in stats.synthetic_ratio().items():
            table[label].append(value)
    return table
