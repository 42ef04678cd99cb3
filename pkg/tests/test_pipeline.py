import numpy as np

from handedness.neural import MLPConfig
from handedness.pipeline import feature_matrix, mlp_evaluate, segment_all, task_effect, task_effect_csv
from handedness.synth import CohortConfig, generate_cohort_trials


def cohort_matrix(cfg):
    return feature_matrix(segment_all(tr for _, tr in generate_cohort_trials(cfg)))


def test_task_effect_recovers_constructed_ordering():
    cfg = CohortConfig(deltas=[0.5, 0.7, 0.9, 1.0], tasks=[1, 2], trials_per_hand=6, seed=3,
                       task_gains={1: 0.0, 2: 0.8})
    rows = task_effect(cohort_matrix(cfg), seed=0, k=5, n_trees=15, n_bags=3)
    assert [r.task for r in rows] == [2, 1]
    assert rows[0].mean > rows[1].mean + 10
    assert all(r.best >= r.mean for r in rows)
    assert task_effect_csv(rows).splitlines()[0] == "task,best,mean"


def test_task_effect_single_task():
    cfg = CohortConfig(deltas=[0.6, 1.0], tasks=[4], trials_per_hand=6, seed=1)
    rows = task_effect(cohort_matrix(cfg), seed=0, k=3, n_trees=5, n_bags=2)
    assert len(rows) == 1 and rows[0].task == 4
    assert len(rows[0].folds) == 3


def test_mlp_loso_shares_initial_weights():
    cfg = CohortConfig(deltas=[0.3, 0.9, 1.0], tasks=[1, 2], trials_per_hand=3, seed=2)
    matrix = cohort_matrix(cfg)
    res = mlp_evaluate(matrix, "loso", MLPConfig(input_dim=10, max_epochs=5), seed=4)
    again = mlp_evaluate(matrix, "loso", MLPConfig(input_dim=10, max_epochs=5), seed=4)
    assert res.labels == ["S01", "S02", "S03"]
    assert res.initial_digest == again.initial_digest
    assert res.accuracies == again.accuracies
    assert all(len(f) == 10 for f in res.features)
    assert all(0 <= a <= 100 for a in res.accuracies)
    assert res.to_csv().splitlines()[0] == "subject,accuracy,four_point,n_test,epochs,best_epoch"
    assert sum(res.n_test) == len(matrix.hand)
    assert np.isfinite(res.mean)
