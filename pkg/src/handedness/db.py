"""Two-cluster Davies-Bouldin separability of dominant vs non-dominant strokes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCluster, MissingHand
from .features import FeatureMatrix

COINCIDENT_TOL = 1e-12
DEFAULT_CAP = 1e6


@dataclass
class DbIndex:
    value: float
    capped: bool = False


def db_index(d_values, nd_values, cap: float = DEFAULT_CAP) -> DbIndex:
    """(S_d + S_nd) / |c_d - c_nd| with S the mean absolute deviation from the centroid."""
    d = np.asarray(d_values, dtype=float)
    nd = np.asarray(nd_values, dtype=float)
    if d.size == 0 or nd.size == 0:
        raise EmptyCluster("both clusters need at least one value")
    c1, c2 = d.mean(), nd.mean()
    s1 = np.abs(d - c1).mean()
    s2 = np.abs(nd - c2).mean()
    sep = abs(c1 - c2)
    if sep < COINCIDENT_TOL:
        return DbIndex(cap, True)
    return DbIndex(float((s1 + s2) / sep))


def db_index_feature(d_values, nd_values, cap: float = DEFAULT_CAP) -> float:
    return db_index(d_values, nd_values, cap).value


@dataclass
class DbScoreReport:
    subject_id: str
    features: list[str]
    indices: list[float]
    capped: list[bool] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.features)

    @property
    def db_score(self) -> float:
        return float(sum(self.indices))

    @property
    def maximal_ambidexterity(self) -> bool:
        return bool(self.capped) and all(self.capped)

    def csv_rows(self) -> list[str]:
        rows = [f"{self.subject_id},{self.k},{f},{v!r}" for f, v in zip(self.features, self.indices)]
        rows.append(f"{self.subject_id},{self.k},TOTAL,{self.db_score!r}")
        return rows


def db_score(matrix: FeatureMatrix, subject_id: str, features: Sequence[str],
             cap: float = DEFAULT_CAP) -> DbScoreReport:
    """Sum of per-feature DB indices over one subject's pooled strokes."""
    sub = matrix.rows(matrix.subject == subject_id)
    d_rows = sub.hand == 1
    if not d_rows.any() or d_rows.all():
        raise MissingHand(f"subject {subject_id} lacks strokes for one hand")
    indices, capped = [], []
    for name in features:
        col = sub.column(name)
        r = db_index(col[d_rows], col[~d_rows], cap)
        indices.append(r.value)
        capped.append(r.capped)
    return DbScoreReport(subject_id, list(features), indices, capped)


def grade_cohort(matrix: FeatureMatrix, features: Sequence[str],
                 cap: float = DEFAULT_CAP) -> list[DbScoreReport]:
    subjects = list(dict.fromkeys(matrix.subject.tolist()))
    return [db_score(matrix, s, features, cap) for s in subjects]


def reports_to_csv(reports: Sequence[DbScoreReport]) -> str:
    lines = ["subject,k,feature,db_index"]
    for r in reports:
        lines += r.csv_rows()
    return "\n".join(lines) + "\n"
