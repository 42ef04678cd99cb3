"""Pen-trace data model, trial/manifest parsing and Edinburgh Inventory scoring."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateTrialKey,
    EmptyTally,
    EmptyTrial,
    MalformedRow,
    MissingFile,
    NonMonotonicTime,
    UnknownSubject,
)

DEFAULT_SAMPLE_RATE = 134.0
MAX_TRIAL_SECONDS = 8.0 + 0.5
TRIAL_HEADER = ("t", "x", "y", "pressure")
MANIFEST_FORMAT = "handedness-manifest"
MANIFEST_VERSION = 1


class Hand(enum.Enum):
    DOMINANT = "D"
    NON_DOMINANT = "ND"

    @classmethod
    def parse(cls, value: "Hand | str") -> "Hand":
        if isinstance(value, Hand):
            return value
        v = str(value).strip().upper()
        if v in ("D", "DOMINANT"):
            return cls.DOMINANT
        if v in ("ND", "NONDOMINANT", "NON_DOMINANT", "NON-DOMINANT"):
            return cls.NON_DOMINANT
        raise DataError(f"unknown hand {value!r}")

    @property
    def label(self) -> int:
        """Binary class label: 1 for dominant, 0 for non-dominant."""
        return 1 if self is Hand.DOMINANT else 0


class Group(enum.Enum):
    U = "U"
    PU = "PU"
    A = "A"


class Side(enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"


class Preference(enum.IntEnum):
    """One Edinburgh Inventory item answer, encoded as signed check count."""

    STRONG_LEFT = -2
    WEAK_LEFT = -1
    EITHER = 0
    WEAK_RIGHT = 1
    STRONG_RIGHT = 2

    @classmethod
    def parse(cls, value) -> "Preference":
        if isinstance(value, Preference):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        names = {"LL": -2, "L": -1, "LR": 0, "RL": 0, "E": 0, "R": 1, "RR": 2}
        key = str(value).strip().upper()
        if key not in names:
            raise DataError(f"unknown EI response {value!r}")
        return cls(names[key])

    @property
    def checks(self) -> tuple[int, int]:
        """(left checks, right checks) under Oldfield's scheme."""
        return {
            -2: (2, 0),
            -1: (1, 0),
            0: (1, 1),
            1: (0, 1),
            2: (0, 2),
        }[int(self)]

    def mirror(self) -> "Preference":
        return Preference(-int(self))


class PenSample(NamedTuple):
    x: float
    y: float
    t: float
    pressure: float


class TrialKey(NamedTuple):
    subject_id: str
    task_id: int
    hand: Hand
    trial_index: int

    def slug(self) -> str:
        return f"{self.subject_id}_task{self.task_id}_{self.hand.value}_{self.trial_index}"


@dataclass(eq=False)
class Trial:
    subject_id: str
    task_id: int
    hand: Hand
    trial_index: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pressure: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE

    @property
    def key(self) -> TrialKey:
        return TrialKey(self.subject_id, self.task_id, self.hand, self.trial_index)

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    @property
    def samples(self) -> list[PenSample]:
        return [PenSample(*row) for row in zip(self.x, self.y, self.t, self.pressure)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trial):
            return NotImplemented
        return (
            self.key == other.key
            and self.sample_rate_hz == other.sample_rate_hz
            and all(
                np.array_equal(getattr(self, c), getattr(other, c))
                for c in ("t", "x", "y", "pressure")
            )
        )


@dataclass
class SubjectMeta:
    subject_id: str
    group: Group
    declared_hand: Side
    ei_responses: list[Preference] | None = None
    ei_score: int | None = None
    delta: float | None = None

    def __post_init__(self):
        self.group = Group(self.group) if not isinstance(self.group, Group) else self.group
        if not isinstance(self.declared_hand, Side):
            self.declared_hand = Side(str(self.declared_hand).capitalize())
        if self.ei_responses is not None:
            self.ei_responses = [Preference.parse(r) for r in self.ei_responses]
            computed = ei_score(self.ei_responses)
            if self.ei_score is None:
                self.ei_score = computed
            elif int(self.ei_score) != computed:
                raise DataError(
                    f"subject {self.subject_id}: ei_score {self.ei_score} "
                    f"disagrees with responses ({computed})"
                )
        if self.ei_score is not None:
            self.ei_score = int(self.ei_score)
            if not -100 <= self.ei_score <= 100:
                raise DataError(f"subject {self.subject_id}: ei_score out of [-100, 100]")


@dataclass(frozen=True)
class TrialEntry:
    key: TrialKey
    path: Path


@dataclass
class DatasetManifest:
    subjects: list[SubjectMeta]
    trial_files: list[TrialEntry]
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE


@dataclass
class Dataset:
    """Validated, loaded dataset. Treat as immutable."""

    manifest: DatasetManifest
    trials: dict[TrialKey, Trial] = field(default_factory=dict)

    @property
    def subjects(self) -> dict[str, SubjectMeta]:
        return {s.subject_id: s for s in self.manifest.subjects}

    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.manifest.subjects]

    def tasks(self) -> list[int]:
        return sorted({k.task_id for k in self.trials})

    def counts(self) -> dict[str, dict[str, int]]:
        out = {sid: {"D": 0, "ND": 0} for sid in self.subject_ids()}
        for k in self.trials:
            out[k.subject_id][k.hand.value] += 1
        return out

    def iter_trials(self) -> Iterable[Trial]:
        for k in sorted(self.trials, key=_key_order):
            yield self.trials[k]


def _key_order(k: TrialKey):
    return (k.subject_id, k.task_id, 0 if k.hand is Hand.DOMINANT else 1, k.trial_index)


# --------------------------------------------------------------------------- trials


def parse_trial_file(
    content: bytes | str,
    key: TrialKey,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE,
    time_scale: float = 1.0,
) -> Trial:
    """Parse one trial CSV (header ``t,x,y,pressure``; pressure optional).

    ``time_scale`` converts device time units to seconds (e.g. 1e-3 for ms ticks).
    Time is re-zeroed to the first sample.
    """
    if isinstance(content, bytes):
        content = content.decode("utf-8")
    reader = csv.reader(io.StringIO(content))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise EmptyTrial(f"{key.slug()}: empty file") from None
    if tuple(header) == TRIAL_HEADER:
        has_pressure = True
    elif tuple(header) == TRIAL_HEADER[:3]:
        has_pressure = False
    else:
        raise MalformedRow(f"{key.slug()}: bad header {','.join(header)!r}")

    width = len(header)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise MalformedRow(f"{key.slug()}: line {lineno}: expected {width} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise MalformedRow(f"{key.slug()}: line {lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise MalformedRow(f"{key.slug()}: line {lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise EmptyTrial(f"{key.slug()}: no data rows")

    arr = np.asarray(rows, dtype=float)
    t = arr[:, 0] * time_scale
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 3
        raise NonMonotonicTime(f"{key.slug()}: time not strictly increasing at line {bad}")
    t = t - t[0]
    pressure = arr[:, 3] if has_pressure else np.ones(len(t))
    if np.any((pressure < 0) | (pressure > 1)):
        raise MalformedRow(f"{key.slug()}: pressure outside [0, 1]")
    return Trial(
        subject_id=key.subject_id,
        task_id=int(key.task_id),
        hand=Hand.parse(key.hand),
        trial_index=int(key.trial_index),
        t=t,
        x=arr[:, 1].copy(),
        y=arr[:, 2].copy(),
        pressure=np.asarray(pressure, dtype=float).copy(),
        sample_rate_hz=float(sample_rate_hz),
    )


def serialize_trial(trial: Trial) -> str:
    """Render a trial as CSV text; floats use shortest round-trip repr."""
    lines = [",".join(TRIAL_HEADER)]
    for t, x, y, p in zip(trial.t, trial.x, trial.y, trial.pressure):
        lines.append(f"{float(t)!r},{float(x)!r},{float(y)!r},{float(p)!r}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- manifest


def _subject_from_dict(d: dict) -> SubjectMeta:
    try:
        return SubjectMeta(
            subject_id=str(d["id"]),
            group=d.get("group", "U"),
            declared_hand=d.get("declared_hand", "Right"),
            ei_responses=d.get("ei_responses"),
            ei_score=d.get("ei_score"),
            delta=d.get("delta"),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad subject entry {d!r}: {exc}") from None


def subject_to_dict(s: SubjectMeta) -> dict:
    d = {
        "id": s.subject_id,
        "group": s.group.value,
        "declared_hand": s.declared_hand.value,
        "ei_score": s.ei_score,
    }
    if s.ei_responses is not None:
        d["ei_responses"] = [int(r) for r in s.ei_responses]
    if s.delta is not None:
        d["delta"] = s.delta
    return d


def manifest_to_json(manifest: DatasetManifest, root: Path | None = None) -> str:
    trials = []
    for e in manifest.trial_files:
        p = e.path
        if root is not None:
            try:
                p = p.relative_to(root)
            except ValueError:
                pass
        trials.append(
            {
                "subject": e.key.subject_id,
                "task": e.key.task_id,
                "hand": e.key.hand.value,
                "trial": e.key.trial_index,
                "path": p.as_posix(),
            }
        )
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "sample_rate_hz": manifest.sample_rate_hz,
        "subjects": [subject_to_dict(s) for s in manifest.subjects],
        "trials": trials,
    }
    return json.dumps(doc, indent=1) + "\n"


def read_manifest(path: str | Path) -> DatasetManifest:
    """Read and structurally validate a manifest without touching trial files."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest: {exc}") from None
    root = path.parent
    subjects = [_subject_from_dict(d) for d in doc.get("subjects", [])]
    known = {s.subject_id for s in subjects}
    if len(known) != len(subjects):
        raise DataError(f"{path}: duplicate subject ids")
    seen: set[TrialKey] = set()
    entries = []
    for d in doc.get("trials", []):
        try:
            key = TrialKey(str(d["subject"]), int(d["task"]), Hand.parse(d["hand"]), int(d["trial"]))
            p = Path(d["path"])
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: bad trial entry {d!r}: {exc}") from None
        if key.subject_id not in known:
            raise UnknownSubject(f"trial {key.slug()} references unknown subject {key.subject_id!r}")
        if key in seen:
            raise DuplicateTrialKey(f"duplicate trial key {key.slug()}")
        seen.add(key)
        entries.append(TrialEntry(key, p if p.is_absolute() else root / p))
    return DatasetManifest(subjects, entries, float(doc.get("sample_rate_hz", DEFAULT_SAMPLE_RATE)))


def load_manifest(
    path: str | Path,
    sample_rate_hz: float | None = None,
    max_duration_s: float | None = MAX_TRIAL_SECONDS,
) -> Dataset:
    """Load a manifest and parse every trial it references."""
    manifest = read_manifest(path)
    if sample_rate_hz is not None:
        manifest.sample_rate_hz = float(sample_rate_hz)
    for e in manifest.trial_files:
        if not e.path.exists():
            raise MissingFile(f"trial file not found: {e.path}")
    trials = {}
    for e in manifest.trial_files:
        tr = parse_trial_file(e.path.read_bytes(), e.key, manifest.sample_rate_hz)
        if max_duration_s is not None and tr.duration > max_duration_s:
            raise DataError(f"{e.key.slug()}: duration {tr.duration:.3f} s exceeds {max_duration_s} s")
        trials[e.key] = tr
    return Dataset(manifest, trials)


# --------------------------------------------------------------------------- EI


def ei_score(responses: Sequence) -> int:
    """Edinburgh laterality quotient in [-100, 100] from 10 item responses.

    Strong preference puts two checks on one side, weak preference one,
    "either" one on each side. LQ = 100 (R - L) / (R + L), rounded half away from zero.
    """
    prefs = [Preference.parse(r) for r in responses]
    if len(prefs) != 10:
        raise DataError(f"expected 10 EI responses, got {len(prefs)}")
    left = sum(p.checks[0] for p in prefs)
    right = sum(p.checks[1] for p in prefs)
    if left + right == 0:
        raise EmptyTally("EI tally is empty")
    # exact rational arithmetic so the sign-mirror is exact
    num = 100 * (right - left)
    den = left + right
    q, r = divmod(abs(num), den)
    mag = q + (1 if 2 * r >= den else 0)
    return mag if num >= 0 else -mag


def mirror_responses(responses: Sequence) -> list[Preference]:
    return [Preference.parse(r).mirror() for r in responses]
