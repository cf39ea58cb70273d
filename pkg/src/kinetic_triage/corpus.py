"""Triage-note corpus handling: load/save, rule labelling, splitting, synthesis.

Datasets are lists of free-text notes with a binary label: 1 = kinetic
vehicular injury, 0 = anything else. File formats are JSONL (one object per
line with ``id``, ``text``, optional ``label``) and CSV (header
``id,text,label``, RFC-4180 quoting).
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kinetic_triage.errors import DataError

SOURCES = ("mimic_like", "hospital", "synthetic")


@dataclass(frozen=True)
class TriageRecord:
    id: str
    text: str
    label: int | None = None
    source: str = "hospital"

    def __post_init__(self):
        if not self.id:
            raise DataError("record id must be non-empty")
        if not self.text.strip():
            raise DataError(f"record {self.id!r}: text empty after trim")
        if self.label is not None and self.label not in (0, 1):
            raise DataError(f"record {self.id!r}: label {self.label!r} outside {{0,1}}")
        if self.source not in SOURCES:
            raise DataError(f"record {self.id!r}: unknown source {self.source!r}")


@dataclass(frozen=True)
class LabelledDataset:
    """Ordered, fully labelled records with class-count bookkeeping."""

    records: tuple[TriageRecord, ...]
    positives: int = field(init=False)
    negatives: int = field(init=False)

    def __post_init__(self):
        seen = set()
        pos = neg = 0
        for rec in self.records:
            if rec.id in seen:
                raise DataError(f"duplicate id {rec.id!r}")
            seen.add(rec.id)
            if rec.label is None:
                raise DataError(f"record {rec.id!r} is unlabelled")
            if rec.label == 1:
                pos += 1
            else:
                neg += 1
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> list[int]:
        return [rec.label for rec in self.records]  # type: ignore[misc]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0,1), got {self.train_fraction}")


class LabelRuleSet:
    """Keyword/regex labelling rules: any include match without an exclude
    match gives label 1, otherwise ``default_label``.

    Patterns are matched case-insensitively against normalized text
    (lowercased, whitespace collapsed). Invalid patterns fail here, at
    construction, not per record.
    """

    def __init__(self, include: Sequence[str], exclude: Sequence[str] = (),
                 default_label: int = 0):
        if default_label not in (0, 1):
            raise DataError(f"default_label must be 0 or 1, got {default_label}")
        self.include_patterns = tuple(include)
        self.exclude_patterns = tuple(exclude)
        self.default_label = default_label
        self._include = [self._compile(p) for p in include]
        self._exclude = [self._compile(p) for p in exclude]

    @staticmethod
    def _compile(pattern: str) -> re.Pattern:
        try:
            return re.compile(pattern, re.IGNORECASE)
        except re.error as exc:
            raise DataError(f"invalid rule pattern {pattern!r}: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelRuleSet":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"rule file {path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise DataError(f"rule file {path}: expected a JSON object")
        return cls(
            include=raw.get("include", []),
            exclude=raw.get("exclude", []),
            default_label=raw.get("default_label", 0),
        )

    def label_for(self, text: str) -> int:
        norm = normalize_text(text)
        if any(p.search(norm) for p in self._include):
            if not any(p.search(norm) for p in self._exclude):
                return 1
        return self.default_label


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; rule matching only, model text stays raw."""
    return " ".join(text.lower().split())


def apply_rules(records: Iterable[TriageRecord], rules: LabelRuleSet) -> LabelledDataset:
    """Label every record by the rule set; original text is untouched."""
    labelled = [
        TriageRecord(id=r.id, text=r.text, label=rules.label_for(r.text), source=r.source)
        for r in records
    ]
    return LabelledDataset(tuple(labelled))


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _parse_label(raw, lineno: int):
    if raw is None or raw == "":
        return None
    if isinstance(raw, bool):
        raise DataError(f"line {lineno}: label {raw!r} outside {{0,1}}")
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: label {raw!r} outside {{0,1}}") from None
    if value not in (0, 1):
        raise DataError(f"line {lineno}: label {value} outside {{0,1}}")
    return value


def load_records(path: str | Path, format: str | None = None,
                 source: str = "hospital", require_labels: bool = False,
                 ) -> list[TriageRecord]:
    """Read records in file order. ``format`` defaults from the extension."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        records = _read_jsonl(path, source)
    elif fmt == "csv":
        records = _read_csv(path, source)
    else:
        raise DataError(f"unknown format {fmt!r} (expected jsonl or csv)")
    if not records:
        raise DataError(f"{path}: no records")
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise DataError(f"{path}: duplicate id {rec.id!r}")
        seen.add(rec.id)
    if require_labels:
        for rec in records:
            if rec.label is None:
                raise DataError(f"{path}: record {rec.id!r} has no label")
    return records


def _read_jsonl(path: Path, source: str) -> list[TriageRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise DataError(f"{path}: line {lineno}: row needs 'id' and 'text'")
            label = _parse_label(obj.get("label"), lineno)
            try:
                records.append(TriageRecord(str(obj["id"]), str(obj["text"]), label,
                                            obj.get("source", source)))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return records


def _read_csv(path: Path, source: str) -> list[TriageRecord]:
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = {"id", "text"} - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: header missing columns {sorted(missing)}")
        for row in reader:
            lineno = reader.line_num
            if row.get("id") is None or row.get("text") is None:
                raise DataError(f"{path}: line {lineno}: row needs 'id' and 'text'")
            label = _parse_label(row.get("label"), lineno)
            try:
                records.append(TriageRecord(row["id"], row["text"], label, source))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return records


def load_dataset(path: str | Path, format: str | None = None,
                 source: str = "hospital") -> LabelledDataset:
    """Load a fully labelled dataset, preserving file order."""
    return LabelledDataset(tuple(load_records(path, format, source, require_labels=True)))


def save_records(records: Iterable[TriageRecord], path: str | Path,
                 format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "jsonl")
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                obj = {"id": rec.id, "text": rec.text}
                if rec.label is not None:
                    obj["label"] = rec.label
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "text", "label"])
            for rec in records:
                writer.writerow([rec.id, rec.text, "" if rec.label is None else rec.label])
    else:
        raise DataError(f"unknown format {fmt!r} (expected jsonl or csv)")


def save_dataset(data: LabelledDataset, path: str | Path, format: str | None = None) -> None:
    save_records(data.records, path, format)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def split(data: LabelledDataset, spec: SplitSpec) -> tuple[LabelledDataset, LabelledDataset]:
    """Deterministic train/validation partition.

    Train size is floor(train_fraction * N); under stratification the per-class
    sizes are apportioned by largest remainder so each class proportion is
    preserved within one record.
    """
    n = len(data)
    if n < 2:
        raise DataError(f"need at least 2 records to split, got {n}")
    n_train = int(np.floor(spec.train_fraction * n))
    rng = np.random.default_rng(spec.seed)

    if spec.stratified:
        if data.positives == 0 or data.negatives == 0:
            raise DataError("stratified split needs at least one record of each class")
        strata = {
            1: [i for i, r in enumerate(data.records) if r.label == 1],
            0: [i for i, r in enumerate(data.records) if r.label == 0],
        }
        quotas = {c: spec.train_fraction * len(idx) for c, idx in strata.items()}
        takes = {c: int(np.floor(q)) for c, q in quotas.items()}
        leftover = n_train - sum(takes.values())
        # hand remaining slots to the largest fractional remainders (ties: class 1 first)
        by_remainder = sorted(strata, key=lambda c: (quotas[c] - takes[c], c), reverse=True)
        for c in by_remainder[:leftover]:
            takes[c] += 1
        train_idx: set[int] = set()
        for c, idx in strata.items():
            order = rng.permutation(len(idx))
            train_idx.update(idx[j] for j in order[: takes[c]])
    else:
        order = rng.permutation(n)
        train_idx = set(int(i) for i in order[:n_train])

    train = tuple(r for i, r in enumerate(data.records) if i in train_idx)
    val = tuple(r for i, r in enumerate(data.records) if i not in train_idx)
    return LabelledDataset(train), LabelledDataset(val)


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------
# Two keyword domains with partial overlap: "a" stands in for the open-source
# stage-1 corpus, "b" for a hospital-specific stage-2 corpus. Kinetic keywords
# never appear in negative notes, so each domain is linearly separable.

_KINETIC_PHRASES = {
    "a": [
        "driver in mva hit tree",
        "motorbike rider came off at speed",
        "pedestrian struck by car",
        "cyclist hit by turning vehicle",
        "rollover on highway restrained driver",
        "passenger in head on collision",
        "fall from moving ute tray",
    ],
    "b": [
        "pushbike rider clipped by car",
        "scooter rider thrown onto road",
        "quadbike accident on farm",
        "motorcycle collision at intersection",
        "passenger in rollover single vehicle",
        "struck by reversing vehicle in carpark",
        "cyclist hit by opening car door",
    ],
}

_OTHER_PHRASES = {
    "a": [
        "central chest pain radiating to arm",
        "seizure at home this morning",
        "fever and productive cough",
        "abdominal pain overnight with vomiting",
        "laceration from kitchen knife",
        "shortness of breath on exertion",
        "seizure while driving no impact reported",
        "headache since yesterday photophobia",
    ],
    "b": [
        "central chest pain with nausea",
        "seizure witnessed by family",
        "fever rigors and lethargy",
        "dizzy spell at the shops",
        "allergic reaction to peanuts lip swelling",
        "laceration from broken glass at home",
        "shortness of breath worse tonight",
        "migraine not settling with analgesia",
    ],
}

_FILLER = [
    "pt", "reports", "denies", "loc", "gcs", "15", "obs", "stable", "vitals",
    "within", "normal", "limits", "review", "left", "right", "arm", "leg",
    "pain", "score", "7", "nil", "allergies", "ambulance", "arrival",
]


def synthetic_vocabulary() -> list[str]:
    """Every word the synthetic generator can emit, for building toy vocabularies."""
    words: set[str] = set(_FILLER)
    for phrases in (*_KINETIC_PHRASES.values(), *_OTHER_PHRASES.values()):
        for phrase in phrases:
            words.update(phrase.split())
    return sorted(words)


def make_synthetic(n: int, seed: int = 0, domain: str = "a",
                   positive_fraction: float = 0.5) -> LabelledDataset:
    """Generate n keyword-separable synthetic triage notes."""
    if domain not in _KINETIC_PHRASES:
        raise DataError(f"unknown synthetic domain {domain!r}")
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    rng.shuffle(labels)
    records = []
    for i, label in enumerate(labels):
        phrases = _KINETIC_PHRASES[domain] if label == 1 else _OTHER_PHRASES[domain]
        phrase = phrases[int(rng.integers(len(phrases)))]
        n_fill = int(rng.integers(2, 6))
        filler = [_FILLER[int(rng.integers(len(_FILLER)))] for _ in range(n_fill)]
        text = phrase + " " + " ".join(filler)
        records.append(TriageRecord(f"syn-{domain}-{i:05d}", text, int(label), "synthetic"))
    return LabelledDataset(tuple(records))
