"""End-to-end runs that tie the modules together: LOSO and k-fold evaluation,
the baseline comparison grid and the per-task accuracy study."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselines import BaselineKind, accuracy, bagged, train_baseline
from .evaluation import GradeTable, SubjectGrade, accuracy_to_4point, loso_plan, stratified_kfold_plan
from .features import FeatureMatrix, build_feature_matrix, normalize_per_trial, select_features
from .kinematics import SegmentConfig, segment_trial
from .neural import (
    CNNConfig,
    MLPConfig,
    TrainReport,
    build_network,
    model_accuracy,
    stroke_tensor,
    train,
)

DEFAULT_K = 10


def segment_all(trials, config: SegmentConfig | None = None):
    return [(tr, segment_trial(tr, config)) for tr in trials]


def feature_matrix(segmented) -> FeatureMatrix:
    return normalize_per_trial(build_feature_matrix(segmented))


# --------------------------------------------------------------------------- neural evaluation


@dataclass
class EvalResult:
    """Accuracy per fold; for LOSO the fold label is the held-out subject."""

    scheme: str
    model: str
    seed: int
    labels: list[str]
    accuracies: list[float]
    n_test: list[int]
    reports: list[TrainReport] = field(default_factory=list)
    features: list[list[str]] = field(default_factory=list)
    initial_digest: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def by_label(self) -> dict[str, float]:
        return dict(zip(self.labels, self.accuracies))

    def to_csv(self) -> str:
        col = "subject" if self.scheme == "loso" else "fold"
        lines = [f"{col},accuracy,four_point,n_test,epochs,best_epoch"]
        for i, (lab, acc, n) in enumerate(zip(self.labels, self.accuracies, self.n_test)):
            ep, best = (self.reports[i].epochs_run, self.reports[i].best_epoch) if self.reports else ("", "")
            lines.append(f"{lab},{acc!r},{accuracy_to_4point(acc)!r},{n},{ep},{best}")
        return "\n".join(lines) + "\n"


def _run_folds(kind: str, config, plan, inputs_for, y, seed: int, scheme: str) -> EvalResult:
    """Train one network per fold from a shared initial weight set."""
    init_net = build_network(config)
    init_state = init_net.get_state()
    res = EvalResult(scheme, kind, seed, [], [], [], initial_digest=init_net.digest())
    for fold in plan:
        x_tr, x_va, x_te, names = inputs_for(fold)
        if isinstance(config, MLPConfig):
            config = replace(config, input_dim=x_tr.shape[1])
        net = build_network(config)
        if net.n_params == init_net.n_params:
            # every fold starts from the same saved weights
            net.set_state(init_state)
        rep = train(net, x_tr, y[fold.train], val=(x_va, y[fold.val]))
        res.labels.append(fold.label)
        res.accuracies.append(model_accuracy(net, x_te, y[fold.test]))
        res.n_test.append(len(fold.test))
        res.reports.append(rep)
        res.features.append(names)
    return res


def cnn_evaluate(segmented, scheme: str = "loso", config: CNNConfig | None = None,
                 seed: int = 0, k: int = 10) -> EvalResult:
    config = replace(config or CNNConfig(), seed=seed)
    x, y, subjects, _ = stroke_tensor(segmented, config.length)
    plan = (loso_plan(subjects, y, seed) if scheme == "loso"
            else stratified_kfold_plan(y, k, seed, val_fraction=0.2))

    def inputs(fold):
        return x[fold.train], x[fold.val], x[fold.test], []

    return _run_folds("cnn", config, plan, inputs, y, seed, scheme)


def mlp_evaluate(matrix: FeatureMatrix, scheme: str = "loso", config: MLPConfig | None = None,
                 seed: int = 0, k: int = 10, n_features: int = DEFAULT_K) -> EvalResult:
    """Features are selected on each fold's training rows only."""
    config = replace(config or MLPConfig(input_dim=n_features), seed=seed, input_dim=n_features)
    y = matrix.hand
    plan = (loso_plan(matrix.subject, y, seed) if scheme == "loso"
            else stratified_kfold_plan(y, k, seed, val_fraction=0.2))

    def inputs(fold):
        names = select_features(matrix.rows(fold.train), n_features)
        sub = matrix.select(names).values
        return sub[fold.train], sub[fold.val], sub[fold.test], names

    return _run_folds("mlp", config, plan, inputs, y, seed, scheme)


# --------------------------------------------------------------------------- baselines


@dataclass
class GridRow:
    kind: BaselineKind
    params: dict
    without_fs: list[float]
    with_fs: list[float]
    with_fs_bagging: list[float]

    @staticmethod
    def _cell(v: list[float]) -> str:
        return f"{np.mean(v):.2f}±{np.std(v):.2f}"


def grid_to_csv(rows: Sequence[GridRow]) -> str:
    lines = ["kind,params,acc_without_fs,acc_with_fs,acc_with_fs_bagging"]
    for r in rows:
        params = ";".join(f"{k}={v}" for k, v in sorted(r.params.items()))
        lines.append(f"{r.kind.value},{params},{GridRow._cell(r.without_fs)},"
                     f"{GridRow._cell(r.with_fs)},{GridRow._cell(r.with_fs_bagging)}")
    return "\n".join(lines) + "\n"


def baseline_grid(matrix: FeatureMatrix, seed: int = 0, kinds: Sequence = tuple(BaselineKind),
                  k: int = 10, n_features: int = DEFAULT_K, n_bags: int = 10,
                  params: dict | None = None) -> list[GridRow]:
    """Stratified k-fold accuracy without selection, with selection, and with selection plus bagging."""
    y = matrix.hand
    plan = stratified_kfold_plan(y, k, seed)
    rows = []
    for kind in kinds:
        kind = BaselineKind.parse(kind)
        p = (params or {}).get(kind.value)
        a0, a1, a2 = [], [], []
        for fold in plan:
            tr, te = fold.train, fold.test
            m = train_baseline(kind, matrix.values[tr], y[tr], seed, matrix.names, p)
            a0.append(accuracy(m, matrix.values[te], y[te], matrix.names))
            names = select_features(matrix.rows(tr), n_features)
            sub = matrix.select(names).values
            m = train_baseline(kind, sub[tr], y[tr], seed, names, p)
            a1.append(accuracy(m, sub[te], y[te], names))
            m = bagged(kind, sub[tr], y[tr], seed, n_bags, names, p)
            a2.append(accuracy(m, sub[te], y[te], names))
        rows.append(GridRow(kind, m.params, a0, a1, a2))
    return rows


@dataclass
class TaskEffectRow:
    task: int
    best: float
    mean: float
    folds: list[float]


def task_effect(matrix: FeatureMatrix, seed: int = 0, k: int = 10, n_features: int = DEFAULT_K,
                n_trees: int = 100, n_bags: int = 10) -> list[TaskEffectRow]:
    """Per task: random forest with feature selection and bagging under stratified k-fold.

    Rows come back sorted by mean accuracy, best task first.
    """
    rows = []
    params = {"n_trees": n_trees}
    for task in sorted(set(matrix.task.tolist())):
        sub = matrix.rows(matrix.task == task)
        y = sub.hand
        accs = []
        for fold in stratified_kfold_plan(y, k, seed):
            names = select_features(sub.rows(fold.train), n_features)
            vals = sub.select(names).values
            m = bagged(BaselineKind.RANDOM_FOREST, vals[fold.train], y[fold.train], seed, n_bags, names, params)
            accs.append(accuracy(m, vals[fold.test], y[fold.test], names))
        rows.append(TaskEffectRow(int(task), float(np.max(accs)), float(np.mean(accs)), accs))
    rows.sort(key=lambda r: (-r.mean, r.task))
    return rows


def task_effect_csv(rows: Sequence[TaskEffectRow]) -> str:
    lines = ["task,best,mean"]
    lines += [f"{r.task},{r.best!r},{r.mean!r}" for r in rows]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- grades


def merge_grades(subject_meta: dict, db: dict[str, float], mlp: dict[str, float],
                 cnn: dict[str, float]) -> GradeTable:
    """One grade row per subject; missing scores are left blank."""
    out = []
    for sid, meta in subject_meta.items():
        nan = float("nan")
        ei = meta.ei_score if meta.ei_score is not None else nan
        out.append(SubjectGrade(sid, meta.group.value, db.get(sid, nan), mlp.get(sid, nan),
                                cnn.get(sid, nan), float(ei)))
    return GradeTable(out)
