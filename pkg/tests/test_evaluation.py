import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from handedness.errors import (
    ClassTooSmall,
    ConvexFit,
    LengthMismatch,
    NonPositiveY,
    OutOfRange,
    RankDeficient,
    TooFewSamples,
    TooFewSubjects,
    ZeroVariance,
)
from handedness.evaluation import (
    accuracy_to_4point,
    agreement_stats,
    bland_altman,
    fit_exponential,
    fit_quadratic,
    invert_quadratic,
    ks_normality,
    loso_plan,
    mann_whitney_u,
    parse_grades,
    quadratic,
    scale_ei,
    stratified_kfold_plan,
    t_test_unpaired,
)

from oracles import lstsq_poly, loglinear, pair_count_u, quadratic_roots

QUAD_REF = (-3.1055, 44.134, -64.503)
MLP_EXP_REF = (0.2163, 1.4724)


# ---------------------------------------------------------------- fold plans

def test_kfold_exact_divisibility():
    y = np.repeat([0, 1], 50)
    plan = stratified_kfold_plan(y, 10, seed=3)
    for f in plan:
        assert np.sum(y[f.test] == 0) == 5 and np.sum(y[f.test] == 1) == 5


def test_kfold_counts_within_one_exhaustive():
    for n0 in range(10, 40):
        for n1 in range(10, 40):
            y = np.array([0] * n0 + [1] * n1)
            plan = stratified_kfold_plan(y, 10, seed=n0 * 100 + n1)
            sizes = [len(f.test) for f in plan]
            assert max(sizes) - min(sizes) <= 1
            for cls, n in ((0, n0), (1, n1)):
                per = [np.sum(y[f.test] == cls) for f in plan]
                assert all(abs(c - n / 10) < 1 for c in per)


def test_kfold_103_rows():
    y = np.array([0] * 52 + [1] * 51)
    sizes = sorted(len(f.test) for f in stratified_kfold_plan(y, 10, seed=0))
    assert set(sizes) <= {10, 11} and sum(sizes) == 103


def test_kfold_partition_and_val_split():
    y = np.random.default_rng(0).integers(0, 2, 97)
    plan = stratified_kfold_plan(y, 10, seed=1, val_fraction=0.2)
    tests = np.concatenate([f.test for f in plan])
    assert sorted(tests) == list(range(97))
    for f in plan:
        assert len(set(f.train) | set(f.val) | set(f.test)) == 97
        assert not set(f.train) & set(f.val)


def test_kfold_class_too_small():
    with pytest.raises(ClassTooSmall):
        stratified_kfold_plan([0] * 4 + [1] * 50, 10)


def test_loso_43_subjects():
    subjects = np.repeat([f"S{i:02d}" for i in range(43)], 6)
    labels = np.tile([0, 1], 43 * 3)
    plan = loso_plan(subjects, labels)
    assert len(plan) == 43
    assert sorted(np.concatenate([f.test for f in plan])) == list(range(len(subjects)))


def test_loso_exclusion_and_determinism():
    subjects = np.repeat(["A", "B", "C"], 20)
    labels = np.tile([0, 1], 30)
    plan = loso_plan(subjects, labels, seed=4)
    fold_a = plan.folds[0]
    assert fold_a.label == "A"
    assert set(subjects[fold_a.train]) | set(subjects[fold_a.val]) == {"B", "C"}
    assert len(fold_a.val) == 8  # 20% of 40, stratified 4 + 4
    again = loso_plan(subjects, labels, seed=4)
    for f, g in zip(plan, again):
        assert np.array_equal(f.train, g.train) and np.array_equal(f.val, g.val)


def test_loso_too_few_subjects():
    with pytest.raises(TooFewSubjects):
        loso_plan(["A", "A", "B", "B"], [0, 1, 0, 1])


# ---------------------------------------------------------------- grading

def test_four_point_examples():
    assert accuracy_to_4point(97.81) == pytest.approx(3.9124)
    assert round(accuracy_to_4point(97.81), 3) == 3.912
    assert accuracy_to_4point(100) == 4
    assert accuracy_to_4point(47.98) == pytest.approx(1.9192)
    with pytest.raises(OutOfRange):
        accuracy_to_4point(100.5)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=30, unique=True))
def test_four_point_order_preserving(acc):
    # weak order: scaling a subnormal by 0.04 can underflow to the same value as 0
    acc = np.array(acc)
    scores = accuracy_to_4point(acc)[np.argsort(acc)]
    assert np.all(np.diff(scores) >= 0)


def test_grade_table_roundtrip(table2):
    assert parse_grades(table2.to_csv()).to_csv() == table2.to_csv()
    assert len(table2.grades) == 43


# ---------------------------------------------------------------- fits

def test_quadratic_exact_recovery():
    xs = np.arange(2, 9, dtype=float)
    got = fit_quadratic(xs, quadratic(QUAD_REF, xs))
    np.testing.assert_allclose(got, QUAD_REF, rtol=0, atol=1e-9)


def test_quadratic_fixture_matches_oracle(table2):
    xs, ys = table2.column("dbs"), 100 - np.abs(table2.column("eis"))
    np.testing.assert_allclose(fit_quadratic(xs, ys), lstsq_poly(xs, ys, 2), rtol=1e-9)


def test_quadratic_rank_deficient():
    with pytest.raises(RankDeficient):
        fit_quadratic([1, 1, 2, 2], [0, 1, 2, 3])


def test_exponential_exact_recovery():
    xs = np.linspace(1, 4, 9)
    got = fit_exponential(xs, MLP_EXP_REF[0] * np.exp(MLP_EXP_REF[1] * xs))
    np.testing.assert_allclose(got, MLP_EXP_REF, rtol=0, atol=1e-9)


@pytest.mark.parametrize("col", ["fourpt_mlp", "fourpt_cnn"])
def test_exponential_fixture_matches_oracle(table2, col):
    xs, ys = table2.column(col), np.abs(table2.column("eis"))
    np.testing.assert_allclose(fit_exponential(xs, ys), loglinear(xs, ys), rtol=1e-9)


def test_exponential_errors():
    with pytest.raises(NonPositiveY):
        fit_exponential([1, 2, 3], [1, 0, 2])
    with pytest.raises(RankDeficient):
        fit_exponential([2, 2, 2], [1, 2, 3])


def test_invert_roundtrip_and_clamp():
    assert invert_quadratic(QUAD_REF, float(quadratic(QUAD_REF, 4.0)))[0] == pytest.approx(4.0, abs=1e-9)
    x, clamped = invert_quadratic(QUAD_REF, 95.0)
    assert clamped and x == pytest.approx(44.134 / 6.211)
    assert x == pytest.approx(7.105, abs=1e-3)


def test_invert_branch_selection():
    y = float(quadratic(QUAD_REF, 7.0))
    roots = quadratic_roots(QUAD_REF[0], QUAD_REF[1], QUAD_REF[2] - y)
    vertex = -QUAD_REF[1] / (2 * QUAD_REF[0])
    expected = [r for r in roots if r <= vertex + 1e-12]
    assert len(roots) == 2 and len(expected) == 1
    assert invert_quadratic(QUAD_REF, y)[0] == pytest.approx(expected[0], abs=1e-9)
    assert invert_quadratic(QUAD_REF, y)[0] == pytest.approx(7.0, abs=1e-9)


def test_invert_convex():
    with pytest.raises(ConvexFit):
        invert_quadratic((1.0, 0.0, 0.0), 1.0)


@given(st.floats(0.0, 7.1))
def test_invert_is_left_inverse(x):
    assert invert_quadratic(QUAD_REF, float(quadratic(QUAD_REF, x)))[0] == pytest.approx(x, abs=1e-6)


def test_scale_ei_examples():
    h, flags = scale_ei([-70], "4point", MLP_EXP_REF)
    assert h[0] == pytest.approx(math.log(70 / 0.2163) / 1.4724)
    # the quoted "about 3.923" is a rounding of 3.9253
    assert h[0] == pytest.approx(3.923, abs=5e-3)
    assert abs(h[0] - 3.912) < 0.02  # close to the printed 4-point score of the EI -70 row
    assert not flags[0]
    _, flags = scale_ei([0], "4point", MLP_EXP_REF)
    assert flags[0]


@given(st.integers(0, 100))
def test_scale_ei_fold_symmetry(e):
    for method, fit in (("4point", MLP_EXP_REF), ("db", QUAD_REF)):
        a, _ = scale_ei([e], method, fit)
        b, _ = scale_ei([-e], method, fit)
        assert a[0] == b[0]


# ---------------------------------------------------------------- agreement

def test_bland_altman_identical_and_shift():
    a = np.array([1.0, 2.0, 5.0, 7.0])
    ba = bland_altman(a, a)
    assert ba.bias == 0 and ba.fraction_within == 1.0
    ba = bland_altman(a + 0.3, a)
    assert ba.bias == pytest.approx(0.3) and ba.fraction_within == 1.0
    assert ba.plot_data_csv().splitlines()[0] == "mean,difference,bias,upper,lower"


def test_bland_altman_normal_simulation():
    rng = np.random.default_rng(12)
    a = rng.standard_normal(10_000)
    b = rng.standard_normal(10_000)
    assert 0.94 <= bland_altman(a, b).fraction_within <= 0.96


def test_bland_altman_length_mismatch():
    with pytest.raises(LengthMismatch):
        bland_altman([1, 2, 3], [1, 2])


def test_agreement_identity_and_zero_variance():
    s = np.array([1.0, 2.5, 3.0])
    assert agreement_stats(s, s, 4.0) == (1.0, 0.0)
    with pytest.raises(ZeroVariance):
        agreement_stats(np.ones(3), s, 4.0)


# ---------------------------------------------------------------- tests of significance

small = st.lists(st.integers(0, 8), min_size=3, max_size=12)


@settings(max_examples=200, deadline=None)
@given(small, small)
def test_mwu_statistic_is_pair_count(a, b):
    assert mann_whitney_u(a, b).statistic == pair_count_u(a, b)


@settings(max_examples=50, deadline=None)
@given(small, small)
def test_mwu_p_matches_reference(a, b):
    ref = stats.mannwhitneyu(a, b, use_continuity=True, alternative="two-sided", method="asymptotic")
    ours = mann_whitney_u(a, b)
    if np.isfinite(ref.pvalue):
        assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_identical_samples_not_significant():
    a = [3.0, 1.0, 4.0, 1.5, 9.0]
    assert mann_whitney_u(a, a).p_value == pytest.approx(1.0, abs=1e-9)
    assert t_test_unpaired(a, a).p_value == pytest.approx(1.0, abs=1e-9)


def test_disjoint_ranges_significant():
    a, b = list(range(1, 11)), list(range(100, 111))
    # exact permutation p: only the two extreme labellings reach |U - mu| = 55
    exact = 2 / math.comb(21, 10)
    assert exact < 0.001
    assert mann_whitney_u(a, b).p_value < 0.001
    assert t_test_unpaired(a, b).p_value < 0.001


def test_welch_matches_reference():
    rng = np.random.default_rng(5)
    a, b = rng.normal(0, 1, 12), rng.normal(0.7, 2.5, 20)
    ref = stats.ttest_ind(a, b, equal_var=False)
    ours = t_test_unpaired(a, b)
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)


def test_ks_simulation():
    rng = np.random.default_rng(2024)
    normal = ks_normality(rng.standard_normal(500))
    assert normal.p_value > 0.05 and not normal.significant
    uniform = ks_normality(rng.uniform(0, 1, 500))
    assert uniform.p_value < 0.05


def test_ks_matches_reference_statistic():
    x = np.random.default_rng(7).gamma(2.0, size=80)
    ref = stats.kstest(x, "norm", args=(x.mean(), x.std(ddof=1)))
    ours = ks_normality(x)
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-12)


def test_ks_degenerate():
    with pytest.raises(TooFewSamples):
        ks_normality([2.0] * 10)
    with pytest.raises(TooFewSamples):
        ks_normality([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(TooFewSamples):
        mann_whitney_u([1, 2], [3, 4, 5])
