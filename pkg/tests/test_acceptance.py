"""Acceptance criteria, one test each.

Every test records a PASS or FAIL line (criterion number, measured values,
runtime) that the terminal summary prints at the end of the run.
"""

import hashlib
import time

import numpy as np
import pytest
from scipy import stats

from handedness.cli import main
from handedness.db import db_index_feature, grade_cohort
from handedness.evaluation import (
    accuracy_to_4point,
    compare_ei,
    fit_exponential,
    fit_quadratic,
    ks_normality,
    mann_whitney_u,
    quadratic,
    t_test_unpaired,
)
from handedness.features import select_features
from handedness.kinematics import segment_trial
from handedness.neural import CNNConfig, MLPConfig, build_cnn, build_mlp, gradient_check
from handedness.pipeline import cnn_evaluate, feature_matrix, segment_all
from handedness.synth import CohortConfig, generate_cohort_trials

from oracles import butterworth_double_pass_gain, db_index_brute, loglinear, lstsq_poly, pair_count_u
from test_kinematics import make_trial, sine_gain

RESULTS: dict[int, str] = {}

QUAD_REF = (-3.1055, 44.134, -64.503)
MLP_EXP_REF = (0.2163, 1.4724)
CNN_EXP_REF = (0.0950, 1.6726)


class Criterion:
    """Times the block, records the PASS/FAIL line, then asserts."""

    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget = number, title, budget_s
        self.checks: list[tuple[bool, str]] = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc_type is not None:
            self.checks.append((False, f"raised {exc_type.__name__}: {exc}"))
        self.check(elapsed < self.budget, f"runtime {elapsed:.1f}s (budget {self.budget:g}s)")
        ok = all(c for c, _ in self.checks)
        failed = [d for c, d in self.checks if not c]
        shown = failed + [self.checks[-1][1]] if failed and self.checks[-1][0] else failed or [d for _, d in self.checks]
        line = f"{'PASS' if ok else 'FAIL'} criterion {self.number:2d} {self.title}: " + "; ".join(shown)
        RESULTS[self.number] = line
        print(line)
        if exc_type is None:
            assert ok, line
        return False


def rel(got, want):
    return abs(got / want - 1)


# ---------------------------------------------------------------- 1-5 fixture agreement

def test_criterion_01_quadratic_fit(table2):
    with Criterion(1, "quadratic fit on the fixture", 1) as c:
        xs, ys = table2.column("dbs"), 100 - np.abs(table2.column("eis"))
        got = fit_quadratic(xs, ys)
        oracle = lstsq_poly(xs, ys, 2)
        c.check(np.allclose(got, oracle, rtol=1e-9), f"oracle agreement {np.max(np.abs(np.subtract(got, oracle))):.1e}")
        for name, g, w in zip("abc", got, QUAD_REF):
            c.check(rel(g, w) <= 0.20, f"{name}={g:.4f} vs {w} ({rel(g, w):.1%})")
        for x in (2.5, 5.0, 7.0):
            d = abs(quadratic(got, x) - quadratic(QUAD_REF, x))
            c.check(d <= 5.0, f"|curve diff| at {x} = {d:.3f}")


def test_criterion_02_exponential_fits(table2):
    with Criterion(2, "exponential fits on the fixture", 1) as c:
        ys = np.abs(table2.column("eis"))
        for col, want in (("fourpt_mlp", MLP_EXP_REF), ("fourpt_cnn", CNN_EXP_REF)):
            xs = table2.column(col)
            a, b = fit_exponential(xs, ys)
            oa, ob = loglinear(xs, ys)
            c.check(abs(a - oa) < 1e-9 and abs(b - ob) < 1e-9, f"{col} oracle agreement")
            c.check(rel(a, want[0]) <= 0.25, f"{col} a={a:.4f} vs {want[0]} ({rel(a, want[0]):.1%})")
            c.check(rel(b, want[1]) <= 0.10, f"{col} b={b:.4f} vs {want[1]} ({rel(b, want[1]):.1%})")


def test_criterion_03_correlations(table2):
    with Criterion(3, "Pearson r against scaled EI", 1) as c:
        for method, want in (("db", 0.87), ("mlp", 0.91), ("cnn", 0.91)):
            rep = compare_ei(table2, method)
            ref = stats.pearsonr(rep.scores, rep.scaled_ei)[0]
            c.check(abs(rep.pearson_r - ref) < 1e-12, f"{method} r matches scipy")
            c.check(abs(rep.pearson_r - want) <= 0.03, f"{method} r={rep.pearson_r:.3f} (target {want}±0.03)")


def test_criterion_04_bland_altman(table2):
    with Criterion(4, "Bland-Altman within-limits counts", 1) as c:
        for method in ("db", "mlp", "cnn"):
            ba = compare_ei(table2, method).bland_altman
            n = int(np.sum(np.abs(ba.differences - ba.bias) <= 1.96 * np.std(ba.differences, ddof=1)))
            c.check(n == ba.n_within, f"{method} brute-force count {n}")
            c.check(abs(ba.n_within - 39) <= 1, f"{method} {ba.n_within}/43 (target 39±1)")


def test_criterion_05_four_point_mapping(table2):
    with Criterion(5, "accuracy x 0.04 against printed 4-point scores", 1) as c:
        for acc_col, pt_col in (("mlp_acc", "fourpt_mlp"), ("cnn_acc", "fourpt_cnn")):
            acc, printed = table2.column(acc_col), table2.column(pt_col)
            err = np.max(np.abs(accuracy_to_4point(acc) - printed))
            c.check(len(acc) == 43 and err <= 0.0005, f"{pt_col} max error {err:.5f} over {len(acc)} rows")


# ---------------------------------------------------------------- 6-7 networks

def test_criterion_06_gradient_check():
    with Criterion(6, "finite-difference gradient check", 30) as c:
        rng = np.random.default_rng(0)
        for name, net, x in (
            ("mlp", build_mlp(MLPConfig(input_dim=10, seed=1)), rng.standard_normal((16, 10))),
            ("cnn", build_cnn(CNNConfig(seed=2)), rng.standard_normal((4, 150, 3))),
        ):
            y = np.arange(len(x)) % 2
            res = gradient_check(net, x, y, n_params=80)
            c.check(res.checked >= 50 and res.max_rel_error < 1e-4,
                    f"{name} {res.checked} params, max rel error {res.max_rel_error:.1e}")


def test_criterion_07_cnn_shapes():
    with Criterion(7, "CNN shape contract", 1) as c:
        shapes = build_cnn().layer_shapes()
        lengths = [150] + [s[0] for n, s in shapes if n in ("Conv1D", "MaxPool1D")]
        flat = [s[0] for n, s in shapes if n == "Flatten"]
        dense = [s[0] for n, s in shapes if n == "Dense"]
        c.check(lengths == [150, 148, 74, 72, 36, 34, 17], f"lengths {lengths}")
        c.check(flat == [544], f"flatten {flat}")
        c.check(dense == [20, 20, 1], f"dense {dense}")


# ---------------------------------------------------------------- 8-10 signal and DB oracles

def test_criterion_08_filter_gain():
    with Criterion(8, "zero-phase Butterworth gain", 1) as c:
        g15, g30 = sine_gain(15.0), sine_gain(30.0)
        c.check(rel(g15, 0.5) <= 0.02, f"gain(15 Hz)={g15:.4f} (0.5±2%)")
        c.check(rel(g30, 0.0039) <= 0.10, f"gain(30 Hz)={g30:.5f} (0.0039±10%)")
        c.check(rel(g30, butterworth_double_pass_gain(30.0, 15.0, 4)) <= 0.10, "30 Hz matches analytic oracle")


def test_criterion_09_segmentation():
    with Criterion(9, "1 Hz sinusoid segmentation", 1) as c:
        t = np.arange(int(8 * 134)) / 134.0
        strokes = segment_trial(make_trial(np.sin(2 * np.pi * t)))
        interior = [len(s) for s in strokes[1:-1]]
        c.check(len(strokes) == 17, f"{len(strokes)} strokes")
        c.check(all(abs(n - 67) <= 1 for n in interior), f"interior lengths {min(interior)}..{max(interior)}")


def test_criterion_10_db_index():
    with Criterion(10, "DB index against brute force", 5) as c:
        rng = np.random.default_rng(10)
        worst = worst_inv = 0.0
        for _ in range(200):
            d = rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 2), rng.integers(2, 12))
            nd = rng.normal(rng.uniform(-3, 3), rng.uniform(0.1, 2), rng.integers(2, 12))
            got = db_index_feature(d, nd)
            want = db_index_brute(d.tolist(), nd.tolist())
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
            a, b = rng.choice([-1, 1]) * rng.uniform(0.1, 10), rng.uniform(-50, 50)
            inv = db_index_feature(a * d + b, a * nd + b)
            worst_inv = max(worst_inv, abs(inv - got) / max(1.0, abs(got)))
        c.check(worst <= 1e-12, f"max error vs brute force {worst:.1e}")
        c.check(worst_inv <= 1e-12, f"max scale/shift deviation {worst_inv:.1e}")


# ---------------------------------------------------------------- 11 synthetic monotonicity

def test_criterion_11_synthetic_monotonicity():
    deltas = [0.0, 0.4, 0.8]
    with Criterion(11, "synthetic monotonicity in delta", 900) as c:
        for seed in (1, 2, 3):
            cfg = CohortConfig(deltas=deltas, tasks=[1, 2], trials_per_hand=6, seed=seed)
            seg = segment_all(tr for _, tr in generate_cohort_trials(cfg))
            matrix = feature_matrix(seg)
            db = [r.db_score for r in grade_cohort(matrix, select_features(matrix, 10))]
            acc = cnn_evaluate(seg, "loso", seed=seed).accuracies
            rho_db = stats.spearmanr(deltas, db)[0]
            c.check(all(a > b for a, b in zip(db, db[1:])),
                    f"seed {seed} DB {[round(v, 2) for v in db]} (rank corr {rho_db:+.0f})")
            c.check(all(a <= b for a, b in zip(acc, acc[1:])),
                    f"seed {seed} CNN LOSO {[round(v, 1) for v in acc]}")
            c.check(43 <= acc[0] <= 57, f"seed {seed} delta=0 accuracy {acc[0]:.1f}")


# ---------------------------------------------------------------- 12 statistics

def test_criterion_12_statistics(table2):
    with Criterion(12, "statistics oracles", 30) as c:
        rng = np.random.default_rng(12)
        mismatches = 0
        pairs = 0
        for n1 in range(3, 13):
            for n2 in range(3, 13):
                for _ in range(5):
                    a, b = rng.integers(0, 6, n1), rng.integers(0, 6, n2)
                    mismatches += mann_whitney_u(a, b).statistic != pair_count_u(a, b)
                    pairs += 1
        c.check(mismatches == 0, f"U equals pair count on {pairs} sample pairs")
        same = [3.0, 1.0, 4.0, 1.5, 9.0]
        c.check(mann_whitney_u(same, same).p_value > 0.999 and t_test_unpaired(same, same).p_value > 0.999,
                "identical samples p=1")
        lo, hi = list(range(1, 11)), list(range(100, 111))
        c.check(mann_whitney_u(lo, hi).p_value < 0.001 and t_test_unpaired(lo, hi).p_value < 0.001,
                "disjoint samples p<0.001")
        sim = np.random.default_rng(2024)
        p_norm = ks_normality(sim.standard_normal(500)).p_value
        p_unif = ks_normality(sim.uniform(0, 1, 500)).p_value
        c.check(p_norm > 0.05 and p_unif < 0.05, f"KS p normal={p_norm:.3f} uniform={p_unif:.2e}")
        acc, ei = table2.column("mlp_acc"), table2.column("eis")
        p = mann_whitney_u(acc[ei < 0], acc[ei > 0]).p_value
        c.check(0.55 <= p <= 0.75, f"fixture MWU p={p:.4f} (target [0.55, 0.75])")


# ---------------------------------------------------------------- 13 determinism

def snapshot(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_13_determinism(tmp_path):
    data, out = tmp_path / "cohort", tmp_path / "out"
    feats = str(out / "features.csv")
    plain = ["--out", str(out)]
    common = ["--seed", "7"] + plain
    commands = [
        ["synth", "--deltas", "0,0.6,1", "--tasks", "1,2", "--trials", "2", "--seed", "7", "--out", str(data)],
        ["ingest", "--data", str(data)] + plain,
        ["segment", "--data", str(data)] + plain,
        ["features", "--data", str(data), "--k", "5"] + common,
        ["grade-db", "--data", str(data), "--k", "5"] + common,
        ["train", "mlp", "--features", feats, "--k", "5", "--epochs", "10"] + common,
        ["train", "cnn", "--data", str(data), "--epochs", "1"] + common,
        ["eval", "loso", "--model", "mlp", "--features", feats, "--k", "5", "--epochs", "10"] + common,
        ["eval", "cv", "--model", "baselines", "--features", feats, "--k", "5", "--folds", "3",
         "--trees", "3", "--bags", "2"] + common,
        ["eval", "loso", "--model", "cnn", "--data", str(data), "--epochs", "1"] + common,
        ["task-effect", "--features", feats, "--k", "5", "--folds", "3", "--trees", "3", "--bags", "2"] + common,
        ["grades", "--data", str(data), "--db", str(out / "db_scores.csv"),
         "--mlp", str(out / "eval_loso_mlp.csv"), "--cnn", str(out / "eval_loso_cnn.csv")] + plain,
        ["compare-ei", "--method", "all"] + plain,
        ["stats"] + plain,
    ]
    with Criterion(13, "CLI reruns are byte-identical", 600) as c:
        for cmd in commands:
            target = data if cmd[0] == "synth" else out
            rc1 = main(cmd)
            first = snapshot(target)
            rc2 = main(cmd)
            second = snapshot(target)
            name = " ".join(cmd[:4] if cmd[0] == "eval" else cmd[:2] if cmd[0] == "train" else cmd[:1])
            changed = sorted(k for k in first if first[k] != second.get(k))
            c.check(rc1 == rc2 == 0 and first == second,
                    f"{name}: exit {rc1}/{rc2}, {len(first)} files, changed {changed}")
