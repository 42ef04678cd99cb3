"""Per-stroke handwriting features, per-trial normalization and feature ranking."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, FeatureMismatch, SingleClassLabels, StrokeTooShort
from .ingest import Hand
from .kinematics import Stroke

TIME_FEATURES = ("start_time", "time_duration", "relative_time_to_peak_vv")
STATIC_FEATURES = (
    "initial_vertical_position",
    "vertical_size",
    "initial_horizontal_position",
    "horizontal_size",
    "straightness_irregularity",
    "slant",
    "loop_surface_area",
    "relative_initial_slant",
    "absolute_size",
    "segment_length",
)
DYNAMIC_FEATURES = (
    "peak_horizontal_velocity",
    "peak_horizontal_acceleration",
    "peak_vertical_velocity",
    "peak_vertical_acceleration",
    "average_absolute_velocity",
    "absolute_vertical_jerk",
    "absolute_jerk",
    "npa_points_per_segment",
    "average_pen_pressure",
    "number_of_strokes",
    "energy",
    "pv",
)
FEATURE_NAMES: tuple[str, ...] = TIME_FEATURES + STATIC_FEATURES + DYNAMIC_FEATURES
ROW_COLUMNS = ("hand", "subject", "task", "trial")

INITIAL_SLANT_WINDOW = 0.080  # seconds
MIN_STROKE_SAMPLES = 4


@dataclass
class FeatureVector:
    values: np.ndarray
    degenerate: bool = False

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(FEATURE_NAMES, self.values)}


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v))))


def _shoelace(x: np.ndarray, y: np.ndarray) -> float:
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def extract_stroke_features(stroke: Stroke, n_strokes: int, trial_start: float = 0.0,
                            next_stroke: Stroke | None = None) -> FeatureVector:
    """The 25 stroke features.

    A closed stroke (start point == end point) is flagged ``degenerate``;
    its straightness irregularity and slant are then 0.
    """
    n = len(stroke.t)
    if n < MIN_STROKE_SAMPLES:
        raise StrokeTooShort(f"stroke of {n} samples; need {MIN_STROKE_SAMPLES}")
    t, x, y = stroke.t, stroke.x, stroke.y
    duration = float(t[-1] - t[0])

    dx, dy = float(x[-1] - x[0]), float(y[-1] - y[0])
    chord = math.hypot(dx, dy)
    degenerate = chord < 1e-12
    if degenerate:
        slant = 0.0
        straightness = 0.0
    else:
        slant = math.atan2(dy, dx)
        pts = np.column_stack([x - x.mean(), y - y.mean()])
        smallest = np.linalg.svd(pts, compute_uv=False)[-1]
        straightness = float(smallest / math.sqrt(n)) / chord

    m = int(np.searchsorted(t - t[0], INITIAL_SLANT_WINDOW + 1e-12, side="right")) - 1
    m = min(max(m, 1), n - 1)
    ix, iy = float(x[m] - x[0]), float(y[m] - y[0])
    initial_slant = math.atan2(iy, ix) if (ix or iy) else 0.0
    relative_initial_slant = 1.0 if slant == 0.0 else initial_slant / slant

    vsize = float(np.ptp(y))
    hsize = float(np.ptp(x))
    seg_len = float(np.sum(np.hypot(np.diff(x), np.diff(y))))
    loop_area = 0.0
    if next_stroke is not None:
        loop_area = _shoelace(np.concatenate([x, next_stroke.x]), np.concatenate([y, next_stroke.y]))

    speed = np.hypot(stroke.vx, stroke.vy)
    avg_speed = float(speed.mean())
    p = int(np.argmax(np.abs(stroke.vy)))
    q = min(max(p, 1), n - 2)
    vy = stroke.vy
    energy = float(vy[q] ** 2 - vy[q - 1] * vy[q + 1])
    acc = np.hypot(stroke.ax, stroke.ay)
    peaks = int(np.sum((acc[1:-1] > acc[:-2]) & (acc[1:-1] > acc[2:])))
    avg_pressure = float(stroke.pressure.mean())

    values = np.array([
        float(t[0] - trial_start),
        duration,
        float(t[p] - t[0]) / duration,
        float(y[0]),
        vsize,
        float(x[0]),
        hsize,
        straightness,
        slant,
        loop_area,
        relative_initial_slant,
        math.hypot(vsize, hsize),
        seg_len,
        float(np.max(np.abs(stroke.vx))),
        float(np.max(np.abs(stroke.ax))),
        float(np.max(np.abs(stroke.vy))),
        float(np.max(np.abs(stroke.ay))),
        avg_speed,
        _rms(stroke.jy),
        _rms(stroke.jerk),
        float(max(1, peaks)),
        avg_pressure,
        float(n_strokes),
        energy,
        avg_speed * avg_pressure,
    ])
    return FeatureVector(values, degenerate)


def extract_trial_features(strokes: Sequence[Stroke], trial_start: float = 0.0) -> np.ndarray:
    rows = []
    for i, s in enumerate(strokes):
        nxt = strokes[i + 1] if i + 1 < len(strokes) else None
        rows.append(extract_stroke_features(s, len(strokes), trial_start, nxt).values)
    return np.array(rows).reshape(len(rows), len(FEATURE_NAMES))


# --------------------------------------------------------------------------- matrix


@dataclass
class FeatureMatrix:
    values: np.ndarray
    hand: np.ndarray  # 1 = dominant, 0 = non-dominant
    subject: np.ndarray
    task: np.ndarray
    trial: np.ndarray
    names: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.names))
        self.hand = np.asarray(self.hand, dtype=int)
        self.subject = np.asarray(self.subject, dtype=object)
        self.task = np.asarray(self.task, dtype=int)
        self.trial = np.asarray(self.trial, dtype=int)
        n = len(self.values)
        if not all(len(a) == n for a in (self.hand, self.subject, self.task, self.trial)):
            raise DataError("feature matrix row metadata length mismatch")

    def __len__(self):
        return len(self.values)

    @property
    def labels(self) -> np.ndarray:
        return self.hand

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def trial_ids(self) -> np.ndarray:
        """Integer id per row identifying its (subject, task, hand, trial)."""
        keys = list(zip(self.subject, self.task, self.hand, self.trial))
        lookup: dict = {}
        return np.array([lookup.setdefault(k, len(lookup)) for k in keys], dtype=int)

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise FeatureMismatch(f"missing features: {', '.join(missing)}")
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.values[:, idx], self.hand, self.subject, self.task, self.trial,
                             list(names), self.normalized)

    def rows(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.values[mask], self.hand[mask], self.subject[mask],
                             self.task[mask], self.trial[mask], list(self.names), self.normalized)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(f"# normalized={int(self.normalized)}\n")
        out.write(",".join(list(self.names) + list(ROW_COLUMNS)) + "\n")
        for i in range(len(self)):
            vals = ",".join(repr(float(v)) for v in self.values[i])
            hand = "D" if self.hand[i] == 1 else "ND"
            out.write(f"{vals},{hand},{self.subject[i]},{self.task[i]},{self.trial[i]}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureMatrix":
        normalized = False
        lines = []
        for line in text.splitlines():
            if line.startswith("#"):
                if line.strip() == "# normalized=1":
                    normalized = True
                continue
            if line.strip():
                lines.append(line)
        if not lines:
            raise DataError("empty feature file")
        header = lines[0].split(",")
        if tuple(header[-4:]) != ROW_COLUMNS:
            raise DataError("feature file header must end with hand,subject,task,trial")
        names = header[:-4]
        vals, hand, subj, task, trial = [], [], [], [], []
        for line in lines[1:]:
            parts = line.split(",")
            if len(parts) != len(header):
                raise DataError(f"feature row has {len(parts)} fields, expected {len(header)}")
            vals.append([float(v) for v in parts[:-4]])
            hand.append(Hand.parse(parts[-4]).label)
            subj.append(parts[-3])
            task.append(int(parts[-2]))
            trial.append(int(parts[-1]))
        return cls(np.array(vals).reshape(len(vals), len(names)), hand, subj, task, trial,
                   names, normalized)


def build_feature_matrix(segmented: Iterable[tuple]) -> FeatureMatrix:
    """Rows for every stroke of every ``(trial, strokes)`` pair."""
    blocks, hand, subj, task, trial = [], [], [], [], []
    for tr, strokes in segmented:
        if not strokes:
            continue
        block = extract_trial_features(strokes, float(tr.t[0]))
        blocks.append(block)
        n = len(block)
        hand += [tr.hand.label] * n
        subj += [tr.subject_id] * n
        task += [tr.task_id] * n
        trial += [tr.trial_index] * n
    values = np.vstack(blocks) if blocks else np.empty((0, len(FEATURE_NAMES)))
    return FeatureMatrix(values, hand, subj, task, trial)


def normalize_per_trial(matrix: FeatureMatrix) -> FeatureMatrix:
    """Min-max scale every feature within each trial; a constant column maps to 0.5."""
    out = matrix.values.copy()
    ids = matrix.trial_ids()
    for tid in np.unique(ids):
        rows = ids == tid
        block = matrix.values[rows]
        lo, hi = block.min(axis=0), block.max(axis=0)
        span = hi - lo
        flat = span == 0
        scaled = (block - lo) / np.where(flat, 1.0, span)
        scaled[:, flat] = 0.5
        out[rows] = scaled
    return FeatureMatrix(out, matrix.hand, matrix.subject, matrix.task, matrix.trial,
                         list(matrix.names), normalized=True)


# --------------------------------------------------------------------------- selection


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rho with average ranks for ties; 0 when either side is constant."""
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if den == 0:
        return 0.0
    return float(np.dot(ra, rb)) / den


def colinearity_filter(matrix: FeatureMatrix, threshold: float = 0.95) -> list[str]:
    kept: list[int] = []
    ranks = [rankdata(matrix.values[:, j]) for j in range(len(matrix.names))]
    for j in range(len(matrix.names)):
        redundant = False
        for k in kept:
            a, b = ranks[j] - ranks[j].mean(), ranks[k] - ranks[k].mean()
            den = math.sqrt(float(a @ a) * float(b @ b))
            rho = float(a @ b) / den if den else 0.0
            if abs(rho) > threshold:
                redundant = True
                break
        if not redundant:
            kept.append(j)
    return [matrix.names[j] for j in kept]


def stump_accuracy(values: np.ndarray, labels: np.ndarray) -> float:
    """Best training accuracy of a one-threshold rule on a single feature."""
    y = np.asarray(labels, dtype=int)
    n = len(y)
    order = np.argsort(values, kind="stable")
    v, ys = np.asarray(values)[order], y[order]
    ones_total = int(ys.sum())
    zeros_total = n - ones_total
    best = max(ones_total, zeros_total)
    ones_left = np.cumsum(ys)[:-1]
    n_left = np.arange(1, n)
    valid = v[:-1] != v[1:]
    if valid.any():
        ol, nl = ones_left[valid], n_left[valid]
        zl = nl - ol
        left0 = zl + (ones_total - ol)
        left1 = ol + (zeros_total - zl)
        best = max(best, int(left0.max()), int(left1.max()))
    return best / n


@dataclass
class FeatureRanking:
    names: list[str]
    spearman_abs: list[float]
    stump_accuracy: list[float]
    combined_rank: list[float]

    def top(self, k: int) -> list[str]:
        return self.names[:k]

    def to_csv(self) -> str:
        lines = ["rank,feature,spearman_abs,stump_accuracy,combined_rank"]
        for i, (n, s, a, c) in enumerate(zip(self.names, self.spearman_abs,
                                             self.stump_accuracy, self.combined_rank), 1):
            lines.append(f"{i},{n},{s!r},{a!r},{c!r}")
        return "\n".join(lines) + "\n"


def _positions(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    pos = np.empty(len(scores))
    pos[order] = np.arange(1, len(scores) + 1)
    return pos


def rank_features(matrix: FeatureMatrix, labels: np.ndarray | None = None) -> FeatureRanking:
    y = matrix.hand if labels is None else np.asarray(labels, dtype=int)
    if len(np.unique(y)) < 2:
        raise SingleClassLabels("feature ranking needs both classes")
    rho = np.array([abs(spearman(matrix.values[:, j], y)) for j in range(len(matrix.names))])
    acc = np.array([stump_accuracy(matrix.values[:, j], y) for j in range(len(matrix.names))])
    combined = (_positions(rho) + _positions(acc)) / 2.0
    order = np.argsort(combined, kind="stable")
    return FeatureRanking(
        names=[matrix.names[j] for j in order],
        spearman_abs=[float(rho[j]) for j in order],
        stump_accuracy=[float(acc[j]) for j in order],
        combined_rank=[float(combined[j]) for j in order],
    )


def select_features(matrix: FeatureMatrix, k: int, threshold: float = 0.95) -> list[str]:
    """Collinearity filter then the top ``k`` of the combined ranking."""
    survivors = colinearity_filter(matrix, threshold)
    ranking = rank_features(matrix.select(survivors))
    return ranking.top(k)
