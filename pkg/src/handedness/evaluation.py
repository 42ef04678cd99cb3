"""Fold plans, 4-point grading, EI agreement analysis and hypothesis tests."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import special

from .errors import (
    ClassTooSmall,
    ConvexFit,
    DataError,
    LengthMismatch,
    MalformedRow,
    MissingFile,
    NonPositiveY,
    OutOfRange,
    RankDeficient,
    TooFewSamples,
    TooFewSubjects,
    ZeroVariance,
)

# --------------------------------------------------------------------------- fold plans


@dataclass
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    label: str = ""


@dataclass
class FoldPlan:
    folds: list[Fold]
    scheme: str  # "stratified-kfold" or "loso"
    k: int

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def _deal(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row: each class shuffled, then all classes dealt round-robin in turn."""
    fold_of = np.empty(len(labels), dtype=int)
    pos = 0
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        fold_of[idx] = (pos + np.arange(len(idx))) % k
        pos += len(idx)
    return fold_of


def _split_val(idx: np.ndarray, labels: np.ndarray, frac: float,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if frac <= 0:
        return idx, np.array([], dtype=int)
    tr, va = [], []
    for cls in np.unique(labels[idx]):
        c = rng.permutation(idx[labels[idx] == cls])
        n_val = int(round(frac * len(c)))
        if len(c) >= 2:
            n_val = min(max(n_val, 1), len(c) - 1)
        va.append(c[:n_val])
        tr.append(c[n_val:])
    return np.sort(np.concatenate(tr)), np.sort(np.concatenate(va))


def stratified_kfold_plan(labels, k: int = 10, seed: int = 0, val_fraction: float = 0.0) -> FoldPlan:
    """Shuffled stratified k-fold. With ``val_fraction`` each training part is split again."""
    labels = np.asarray(labels)
    if k < 2:
        raise DataError("k must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    for cls, c in zip(classes, counts):
        if c < k:
            raise ClassTooSmall(f"class {cls} has {c} rows, fewer than k={k}")
    rng = np.random.default_rng([seed, 10])
    fold_of = _deal(labels, k, rng)
    folds = []
    all_idx = np.arange(len(labels))
    for f in range(k):
        test = all_idx[fold_of == f]
        tr, va = _split_val(all_idx[fold_of != f], labels, val_fraction, rng)
        folds.append(Fold(tr, va, test, str(f + 1)))
    return FoldPlan(folds, "stratified-kfold", k)


def loso_plan(subjects, labels, seed: int = 0, val_fraction: float = 0.2) -> FoldPlan:
    """One fold per subject; the other subjects' rows split train/validation by hand label."""
    subjects = np.asarray(subjects)
    labels = np.asarray(labels)
    ids = sorted(set(subjects.tolist()))
    if len(ids) < 3:
        raise TooFewSubjects(f"{len(ids)} subjects; leave-one-subject-out needs at least 3")
    folds = []
    for i, s in enumerate(ids):
        rng = np.random.default_rng([seed, 20, i])
        test = np.flatnonzero(subjects == s)
        tr, va = _split_val(np.flatnonzero(subjects != s), labels, val_fraction, rng)
        folds.append(Fold(tr, va, test, s))
    return FoldPlan(folds, "loso", len(ids))


# --------------------------------------------------------------------------- grading


def accuracy_to_4point(accuracy):
    """Linear map of accuracy in percent onto [0, 4]."""
    a = np.asarray(accuracy, dtype=float)
    if np.any(~np.isfinite(a)) or np.any((a < 0) | (a > 100)):
        raise OutOfRange("accuracy must lie in [0, 100]")
    out = a * 0.04
    return float(out) if out.ndim == 0 else out


GRADE_COLUMNS = ["subject", "class", "dbs", "mlp_acc", "fourpt_mlp", "cnn_acc", "fourpt_cnn", "eis"]


@dataclass
class SubjectGrade:
    subject_id: str
    group: str
    db_score: float
    mlp_accuracy: float
    cnn_accuracy: float
    ei_score: float
    four_point_mlp: float = field(default=float("nan"))
    four_point_cnn: float = field(default=float("nan"))

    def __post_init__(self):
        if math.isnan(self.four_point_mlp) and not math.isnan(self.mlp_accuracy):
            self.four_point_mlp = accuracy_to_4point(self.mlp_accuracy)
        if math.isnan(self.four_point_cnn) and not math.isnan(self.cnn_accuracy):
            self.four_point_cnn = accuracy_to_4point(self.cnn_accuracy)


@dataclass
class GradeTable:
    grades: list[SubjectGrade]

    def column(self, name: str) -> np.ndarray:
        attr = {"dbs": "db_score", "mlp_acc": "mlp_accuracy", "cnn_acc": "cnn_accuracy",
                "fourpt_mlp": "four_point_mlp", "fourpt_cnn": "four_point_cnn", "eis": "ei_score"}[name]
        return np.array([getattr(g, attr) for g in self.grades], dtype=float)

    @property
    def subjects(self) -> list[str]:
        return [g.subject_id for g in self.grades]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRADE_COLUMNS)
        for g in self.grades:
            w.writerow([g.subject_id, g.group, _fmt(g.db_score), _fmt(g.mlp_accuracy),
                        _fmt(g.four_point_mlp), _fmt(g.cnn_accuracy), _fmt(g.four_point_cnn),
                        _fmt(g.ei_score)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def parse_grades(text: str) -> GradeTable:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != GRADE_COLUMNS:
        raise MalformedRow(f"grade file header must be {','.join(GRADE_COLUMNS)}")

    def num(s: str) -> float:
        return float(s) if s.strip() else float("nan")

    out = []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != len(GRADE_COLUMNS):
            raise MalformedRow(f"grade row {n}: expected {len(GRADE_COLUMNS)} fields")
        try:
            out.append(SubjectGrade(r[0], r[1], num(r[2]), num(r[3]), num(r[5]), num(r[7]),
                                    num(r[4]), num(r[6])))
        except ValueError:
            raise MalformedRow(f"grade row {n}: non-numeric field") from None
    return GradeTable(out)


def load_grades(path: str | Path) -> GradeTable:
    try:
        return parse_grades(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFile(f"no grade file at {path}") from None


def bundled_table2() -> GradeTable:
    """The 43-subject reference grade table shipped with the package."""
    return parse_grades(resources.files("handedness.fixtures").joinpath("table2.csv").read_text())


# --------------------------------------------------------------------------- curve fits


def solve_normal_equations(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via ``A^T A c = A^T y`` and Gaussian elimination with partial pivoting."""
    M = A.T @ A
    v = A.T @ y
    n = len(v)
    aug = np.column_stack([M, v]).astype(float)
    scale = np.max(np.abs(M)) or 1.0
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) <= 1e-12 * scale:
            raise RankDeficient("normal equations are singular")
        aug[[col, piv]] = aug[[piv, col]]
        for r in range(col + 1, n):
            aug[r] -= aug[r, col] / aug[col, col] * aug[col]
    c = np.zeros(n)
    for r in range(n - 1, -1, -1):
        c[r] = (aug[r, n] - aug[r, r + 1:n] @ c[r + 1:]) / aug[r, r]
    return c


def fit_quadratic(xs, ys) -> tuple[float, float, float]:
    """``y = a x^2 + b x + c`` by ordinary least squares."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys):
        raise LengthMismatch("xs and ys differ in length")
    if len(np.unique(xs)) < 3:
        raise RankDeficient("quadratic fit needs at least 3 distinct x values")
    a, b, c = solve_normal_equations(np.column_stack([xs**2, xs, np.ones_like(xs)]), ys)
    return float(a), float(b), float(c)


def quadratic(coeffs, x):
    a, b, c = coeffs
    return a * np.asarray(x, dtype=float) ** 2 + b * np.asarray(x, dtype=float) + c


def fit_exponential(xs, ys) -> tuple[float, float]:
    """``y = a exp(b x)`` by least squares of ``ln y`` on ``x``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) != len(ys):
        raise LengthMismatch("xs and ys differ in length")
    if np.any(ys <= 0):
        raise NonPositiveY("exponential fit needs strictly positive y")
    if len(np.unique(xs)) < 2:
        raise RankDeficient("exponential fit needs at least 2 distinct x values")
    intercept, slope = solve_normal_equations(np.column_stack([np.ones_like(xs), xs]), np.log(ys))
    return float(math.exp(intercept)), float(slope)


def invert_quadratic(coeffs, y: float) -> tuple[float, bool]:
    """Root of ``f(x) = y`` on the increasing branch of a concave quadratic.

    Returns ``(x, clamped)``; values above the vertex map to the vertex abscissa.
    """
    a, b, c = coeffs
    if a >= 0:
        raise ConvexFit(f"inverse needs a concave fit, got a={a}")
    disc = b * b - 4 * a * (c - y)
    if disc <= 0:
        return -b / (2 * a), disc < 0
    # with a < 0 the "+" root is the smaller one, left of the vertex
    return (-b + math.sqrt(disc)) / (2 * a), False


def scale_ei(ei_scores, method: str, fit) -> tuple[np.ndarray, np.ndarray]:
    """EI scores mapped onto a method's score scale; returns ``(h, flags)``.

    ``method="db"``: invert the quadratic at ``100 - |EI|``; flag means vertex clamp.
    ``method="4point"``: ``ln(|EI| / a) / b`` with ``|EI|`` floored at 1; flag means floor hit.
    """
    e = np.abs(np.asarray(ei_scores, dtype=float))
    if method == "db":
        pairs = [invert_quadratic(fit, 100.0 - v) for v in e]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    if method == "4point":
        a, b = fit
        flags = e < 1.0
        return np.log(np.maximum(e, 1.0) / a) / b, flags
    raise ValueError(f"unknown scaling method {method!r}")


# --------------------------------------------------------------------------- agreement


@dataclass
class BlandAltman:
    bias: float
    lower: float
    upper: float
    fraction_within: float
    differences: np.ndarray
    means: np.ndarray

    @property
    def n_within(self) -> int:
        return int(np.sum((self.differences >= self.lower) & (self.differences <= self.upper)))

    def plot_data_csv(self) -> str:
        lines = ["mean,difference,bias,upper,lower"]
        for m, d in zip(self.means, self.differences):
            lines.append(f"{m!r},{d!r},{self.bias!r},{self.upper!r},{self.lower!r}")
        return "\n".join(lines) + "\n"


def bland_altman(a, b) -> BlandAltman:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise LengthMismatch("paired arrays differ in length")
    if len(a) < 3:
        raise TooFewSamples("Bland-Altman needs at least 3 pairs")
    d = a - b
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    lo, hi = bias - 1.96 * sd, bias + 1.96 * sd
    # tolerance so a zero-spread difference sits on its degenerate limits
    tol = 1e-12 * max(1.0, abs(bias))
    inside = (d >= lo - tol) & (d <= hi + tol)
    return BlandAltman(bias, lo, hi, float(inside.mean()), d, (a + b) / 2)


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise LengthMismatch("paired arrays differ in length")
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den == 0:
        raise ZeroVariance("correlation undefined for a constant input")
    return float(da @ db) / den


def agreement_stats(scores, scaled, scale_range: float) -> tuple[float, float]:
    """Pearson r and RMSE as a percentage of ``scale_range``."""
    scores = np.asarray(scores, dtype=float)
    scaled = np.asarray(scaled, dtype=float)
    if np.allclose(scores, scaled, rtol=0, atol=0):
        return 1.0, 0.0
    rmse = math.sqrt(float(np.mean((scores - scaled) ** 2)))
    return pearson_r(scores, scaled), rmse / scale_range * 100.0


@dataclass
class AgreementReport:
    method: str  # "db", "mlp" or "cnn"
    fit: tuple[float, ...]
    subjects: list[str]
    scores: np.ndarray
    scaled_ei: np.ndarray
    clamped: np.ndarray
    bland_altman: BlandAltman
    pearson_r: float
    rmse_percent: float

    def summary_rows(self) -> list[tuple[str, str]]:
        ba = self.bland_altman
        fit_names = ("a", "b", "c") if len(self.fit) == 3 else ("a", "b")
        rows = [("method", self.method)]
        rows += [(f"fit_{n}", repr(float(v))) for n, v in zip(fit_names, self.fit)]
        rows += [("pearson_r", repr(self.pearson_r)), ("rmse_percent", repr(self.rmse_percent)),
                 ("bias", repr(ba.bias)), ("lower", repr(ba.lower)), ("upper", repr(ba.upper)),
                 ("n_within", str(ba.n_within)), ("n", str(len(ba.differences))),
                 ("fraction_within", repr(ba.fraction_within)),
                 ("n_clamped", str(int(np.sum(self.clamped))))]
        return rows

    def subjects_csv(self) -> str:
        lines = ["subject,score,scaled_ei,difference,clamped"]
        for s, a, h, d, c in zip(self.subjects, self.scores, self.scaled_ei,
                                 self.bland_altman.differences, self.clamped):
            lines.append(f"{s},{a!r},{h!r},{d!r},{int(c)}")
        return "\n".join(lines) + "\n"


def compare_ei(table: GradeTable, method: str) -> AgreementReport:
    """Fit the EI curve for one method, rescale EI, and measure agreement."""
    ei = table.column("eis")
    if method == "db":
        scores = table.column("dbs")
        fit = fit_quadratic(scores, 100.0 - np.abs(ei))
        h, flags = scale_ei(ei, "db", fit)
        scale_range = float(np.max(scores))
    elif method in ("mlp", "cnn"):
        scores = table.column(f"fourpt_{method}")
        fit = fit_exponential(scores, np.maximum(np.abs(ei), 1.0))
        h, flags = scale_ei(ei, "4point", fit)
        scale_range = 4.0
    else:
        raise ValueError(f"unknown method {method!r}")
    if np.any(np.isnan(scores)):
        raise DataError(f"grade table has missing {method} scores")
    r, rmse = agreement_stats(scores, h, scale_range)
    return AgreementReport(method, fit, table.subjects, scores, h, flags, bland_altman(scores, h), r, rmse)


# --------------------------------------------------------------------------- tests


@dataclass
class StatTestResult:
    test: str
    statistic: float
    p_value: float
    alpha: float = 0.05

    @property
    def significant(self) -> bool:
        return self.p_value < self.alpha


def _sample(x, name: str, n_min: int = 3) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if len(x) < n_min:
        raise TooFewSamples(f"{name} has {len(x)} values; need at least {n_min}")
    return x


def t_test_unpaired(a, b) -> StatTestResult:
    """Welch two-sided t-test."""
    a, b = _sample(a, "sample a"), _sample(b, "sample b")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0:
        return StatTestResult("welch-t", 0.0 if diff == 0 else math.copysign(math.inf, diff),
                              1.0 if diff == 0 else 0.0)
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return StatTestResult("welch-t", float(t), float(min(1.0, 2 * special.stdtr(df, -abs(t)))))


def mann_whitney_u(a, b) -> StatTestResult:
    """Two-sided Mann-Whitney U, normal approximation with tie and continuity corrections.

    The reported statistic is U of the first sample: pairs ``a > b`` plus half the ties.
    """
    a, b = _sample(a, "sample a"), _sample(b, "sample b")
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    _, inv, counts = np.unique(pooled, return_inverse=True, return_counts=True)
    # average ranks: each tie block sits at the mean of its positions
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0
    ranks = avg[inv]
    u1 = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    tie = float(np.sum(counts**3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    mu = n1 * n2 / 2.0
    if var <= 0:
        return StatTestResult("mann-whitney-u", u1, 1.0)
    z = (abs(u1 - mu) - 0.5) / math.sqrt(var)
    p = 2.0 * special.ndtr(-max(z, 0.0))
    return StatTestResult("mann-whitney-u", u1, float(min(1.0, p)))


def ks_normality(x) -> StatTestResult:
    """One-sample KS against a normal with the sample's own mean and SD.

    The p-value uses the asymptotic Kolmogorov distribution without a Lilliefors
    correction, so it is conservative.
    """
    x = np.sort(_sample(x, "sample", 5))
    sd = x.std(ddof=1)
    if sd == 0:
        raise TooFewSamples("sample has zero spread; normality undefined")
    n = len(x)
    cdf = special.ndtr((x - x.mean()) / sd)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return StatTestResult("ks-normal", d, float(special.kolmogorov(math.sqrt(n) * d)))
