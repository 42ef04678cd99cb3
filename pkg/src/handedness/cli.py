"""Command-line front end.

Every report is a CSV whose leading ``#`` lines record the subcommand, its
arguments and the seed; figures are PNG files written beside it. Exit codes:
0 success, 2 usage, 3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .db import grade_cohort, reports_to_csv
from .errors import DataError, HandednessError, MissingFile
from .evaluation import (
    BlandAltman,
    bundled_table2,
    compare_ei,
    ks_normality,
    load_grades,
    mann_whitney_u,
    t_test_unpaired,
)
from .features import FeatureMatrix, rank_features, select_features
from .ingest import load_manifest
from .kinematics import SegmentConfig, segmentation_dump, trial_kinematics, stroke_boundaries, zero_crossings
from .neural import CNNConfig, MLPConfig, build_network, save_checkpoint, stroke_tensor, train
from .pipeline import (
    DEFAULT_K,
    baseline_grid,
    cnn_evaluate,
    feature_matrix,
    grid_to_csv,
    merge_grades,
    mlp_evaluate,
    segment_all,
    task_effect,
    task_effect_csv,
)
from .synth import CohortConfig, generate_cohort

OUT_ENV = "HANDEDNESS_OUT"


# --------------------------------------------------------------------------- output helpers


def write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return path


def write_report(path: Path, args: argparse.Namespace, body: str) -> Path:
    """CSV body preceded by ``#`` lines carrying the run configuration."""
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    head = [f"# handedness {__version__}", f"# command: {args.command}",
            f"# seed: {getattr(args, 'seed', '')}",
            f"# config: {json.dumps(config, sort_keys=True, default=str)}"]
    return write_text(path, "\n".join(head) + "\n" + body)


def out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV, "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load(args):
    path = Path(args.data)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise MissingFile(f"no manifest at {path}")
    return load_manifest(path, sample_rate_hz=args.sample_rate)


def _segment_config(args) -> SegmentConfig:
    return SegmentConfig(cutoff_hz=args.cutoff, method=args.filter)


def _segmented(args):
    if not args.data:
        raise DataError("the cnn works on strokes and needs --data, not a feature file")
    return segment_all(_load(args).iter_trials(), _segment_config(args))


def _matrix(args):
    if getattr(args, "features", None):
        try:
            return None, FeatureMatrix.from_csv(Path(args.features).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise MissingFile(f"no feature file at {args.features}") from None
    ds = _load(args)
    seg = segment_all(ds.iter_trials(), _segment_config(args))
    return (ds, seg), feature_matrix(seg)


# --------------------------------------------------------------------------- subcommands


def cmd_synth(args) -> None:
    if args.subjects is not None and args.subjects != len(args.deltas):
        raise DataError(f"--subjects {args.subjects} but {len(args.deltas)} deltas given")
    cfg = CohortConfig(deltas=args.deltas, tasks=args.tasks, trials_per_hand=args.trials,
                       seed=args.seed, sample_rate_hz=args.sample_rate or 134.0)
    manifest = generate_cohort(cfg, out_dir(args))
    n = len(cfg.deltas) * len(cfg.tasks) * 2 * cfg.trials_per_hand
    print(f"wrote {n} trials and {manifest}")


def cmd_ingest(args) -> None:
    ds = _load(args)
    out = out_dir(args)
    lines = ["subject,group,declared_hand,ei_score,d_trials,nd_trials"]
    counts = ds.counts()
    for s in ds.manifest.subjects:
        c = counts[s.subject_id]
        ei = "" if s.ei_score is None else s.ei_score
        lines.append(f"{s.subject_id},{s.group.value},{s.declared_hand.value},{ei},{c['D']},{c['ND']}")
    write_report(out / "ingest_summary.csv", args, "\n".join(lines) + "\n")
    print(f"{len(ds.trials)} trials from {len(counts)} subjects")


def cmd_segment(args) -> None:
    ds = _load(args)
    out = out_dir(args)
    cfg = _segment_config(args)
    lines = ["subject,task,hand,trial,n_samples,n_strokes,min_len,max_len"]
    first = None
    for tr, strokes in segment_all(ds.iter_trials(), cfg):
        lens = [len(s) for s in strokes]
        lines.append(f"{tr.subject_id},{tr.task_id},{tr.hand.value},{tr.trial_index},"
                     f"{tr.n_samples},{len(strokes)},{min(lens)},{max(lens)}")
        if first is None and (args.trial is None or tr.key.slug() == args.trial):
            first = tr
    write_report(out / "strokes.csv", args, "\n".join(lines) + "\n")
    if first is None:
        raise DataError(f"no trial matches {args.trial!r}")
    slug = first.key.slug()
    write_text(out / f"segmentation_{slug}.csv", segmentation_dump(first, cfg))
    kin = trial_kinematics(first, cfg)
    spans = stroke_boundaries(first.n_samples, zero_crossings(kin.vy_corrected), cfg.min_stroke_samples)
    ids = np.concatenate([np.full(b - a, i) for i, (a, b) in enumerate(spans)])
    plotting.segmentation_figure(kin.t, kin.y, kin.vy_corrected, ids, out / f"segmentation_{slug}.png", slug)
    print(f"segmented {len(lines) - 1} trials")


def cmd_features(args) -> None:
    _, matrix = _matrix(args)
    out = out_dir(args)
    write_text(out / "features.csv", matrix.to_csv())
    ranking = rank_features(matrix)
    write_report(out / "ranking.csv", args, ranking.to_csv())
    selected = select_features(matrix, args.k, args.threshold)
    write_report(out / "selected.csv", args, "feature\n" + "\n".join(selected) + "\n")
    print(f"{len(matrix)} strokes x {len(matrix.names)} features; selected {len(selected)}")


def cmd_grade_db(args) -> None:
    _, matrix = _matrix(args)
    out = out_dir(args)
    feats = select_features(matrix, args.k, args.threshold)
    reports = grade_cohort(matrix, feats)
    write_report(out / "db_scores.csv", args, reports_to_csv(reports))
    plotting.db_bar_figure([r.subject_id for r in reports], [r.db_score for r in reports],
                           out / "db_scores.png")
    for r in reports:
        print(f"{r.subject_id} {r.db_score:.4f}")


def _mlp_config(args, dim: int) -> MLPConfig:
    return MLPConfig(input_dim=dim, hidden=args.hidden, lr=1e-3 if args.lr is None else args.lr,
                     max_epochs=100 if args.epochs is None else args.epochs, seed=args.seed)


def _cnn_config(args) -> CNNConfig:
    return CNNConfig(lr=1e-5 if args.lr is None else args.lr,
                     max_epochs=99 if args.epochs is None else args.epochs, seed=args.seed)


def cmd_train(args) -> None:
    out = out_dir(args)
    if args.model == "mlp":
        _, matrix = _matrix(args)
        names = select_features(matrix, args.k)
        x, y = matrix.select(names).values, matrix.hand
        net = build_network(_mlp_config(args, len(names)))
    else:
        x, y, _, _ = stroke_tensor(_segmented(args))
        net = build_network(_cnn_config(args))
    rep = train(net, x, y)
    save_checkpoint(net, out / f"{args.model}_model.npz")
    write_report(out / f"{args.model}_loss.csv", args, rep.to_csv())
    plotting.loss_figure([(args.model, rep.train_loss, rep.val_loss)], out / f"{args.model}_loss.png")
    print(f"{rep.epochs_run} epochs, best {rep.best_epoch}, validation accuracy {rep.final_accuracy:.2f}%")


def cmd_eval(args) -> None:
    out = out_dir(args)
    stem = f"eval_{args.scheme}_{args.model}"
    if args.model == "baselines":
        if args.scheme != "cv":
            raise DataError("the baseline grid runs under cv only")
        _, matrix = _matrix(args)
        rows = baseline_grid(matrix, args.seed, k=args.folds, n_features=args.k, n_bags=args.bags,
                             params={"rf": {"n_trees": args.trees}})
        write_report(out / f"{stem}.csv", args, grid_to_csv(rows))
        plotting.accuracy_bar_figure([r.kind.value for r in rows],
                                     [float(np.mean(r.with_fs_bagging)) for r in rows],
                                     out / f"{stem}.png", errors=[float(np.std(r.with_fs_bagging)) for r in rows])
        print(grid_to_csv(rows), end="")
        return
    if args.model == "mlp":
        _, matrix = _matrix(args)
        res = mlp_evaluate(matrix, args.scheme, _mlp_config(args, args.k), args.seed, args.folds, args.k)
    else:
        res = cnn_evaluate(_segmented(args), args.scheme, _cnn_config(args), args.seed, args.folds)
    write_report(out / f"{stem}.csv", args, res.to_csv())
    plotting.accuracy_bar_figure(res.labels, res.accuracies, out / f"{stem}.png")
    plotting.loss_figure([(lab, r.train_loss, r.val_loss) for lab, r in zip(res.labels, res.reports)],
                         out / f"{stem}_loss.png")
    print(f"mean accuracy {res.mean:.2f} +/- {res.std:.2f} over {len(res.labels)} folds")


def cmd_task_effect(args) -> None:
    _, matrix = _matrix(args)
    out = out_dir(args)
    rows = task_effect(matrix, args.seed, args.folds, args.k, args.trees, args.bags)
    write_report(out / "task_effect.csv", args, task_effect_csv(rows))
    plotting.accuracy_bar_figure([f"task {r.task}" for r in rows], [r.mean for r in rows],
                                 out / "task_effect.png")
    print(task_effect_csv(rows), end="")


def _grades(args):
    """A grade CSV path, or the bundled reference table for ``table2`` or a missing ``table2.csv``."""
    path = Path(args.grades)
    if args.grades == "table2" or (path.name == "table2.csv" and not path.exists()):
        return bundled_table2()
    return load_grades(path)


def cmd_compare_ei(args) -> None:
    table = _grades(args)
    out = out_dir(args)
    methods = ["db", "mlp", "cnn"] if args.method == "all" else [args.method]
    for m in methods:
        rep = compare_ei(table, m)
        body = "key,value\n" + "\n".join(f"{k},{v}" for k, v in rep.summary_rows()) + "\n"
        write_report(out / f"agreement_{m}.csv", args, body)
        write_text(out / f"agreement_{m}_subjects.csv", rep.subjects_csv())
        write_text(out / f"bland_altman_{m}.csv", rep.bland_altman.plot_data_csv())
        plotting.bland_altman_figure(rep, out / f"bland_altman_{m}.png")
        plotting.fit_figure(rep, out / f"fit_{m}.png")
        ba: BlandAltman = rep.bland_altman
        print(f"{m}: r={rep.pearson_r:.3f} rmse%={rep.rmse_percent:.2f} "
              f"within={ba.n_within}/{len(ba.differences)} ({ba.fraction_within:.3f})")


def cmd_stats(args) -> None:
    table = _grades(args)
    out = out_dir(args)
    values = table.column(args.column)
    ei = table.column("eis")
    left, right = values[ei < 0], values[ei > 0]
    lines = ["test,group,statistic,p_value,significant"]
    for res, group in ((t_test_unpaired(left, right), "left_vs_right"),
                       (mann_whitney_u(left, right), "left_vs_right"),
                       (ks_normality(left), "left"), (ks_normality(right), "right")):
        lines.append(f"{res.test},{group},{res.statistic!r},{res.p_value!r},{int(res.significant)}")
        print(f"{res.test} {group}: statistic={res.statistic:.4f} p={res.p_value:.4f}")
    write_report(out / f"stats_{args.column}.csv", args, "\n".join(lines) + "\n")


def _read_scores(path: str | None, column: str) -> dict[str, float]:
    """Subject -> value from a DB score report (TOTAL rows) or a LOSO report."""
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingFile(f"no report at {path}") from None
    rows = [r.split(",") for r in text.splitlines() if r and not r.startswith("#")]
    if not rows or column not in rows[0] or rows[0][0] != "subject":
        raise DataError(f"{path} is not a per-subject report with a {column} column")
    ci = rows[0].index(column)
    out = {}
    for r in rows[1:]:
        if column == "db_index" and r[2] != "TOTAL":
            continue
        out[r[0]] = float(r[ci])
    return out


def cmd_grades(args) -> None:
    ds = _load(args)
    out = out_dir(args)
    table = merge_grades(ds.subjects, _read_scores(args.db, "db_index"),
                         _read_scores(args.mlp, "accuracy"), _read_scores(args.cnn, "accuracy"))
    write_report(out / "grades.csv", args, table.to_csv())
    print(f"{len(table.grades)} subjects graded")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handedness", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, seed=True, features=False):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        if data:
            src = sp.add_mutually_exclusive_group(required=True)
            src.add_argument("--data", help="dataset directory or manifest.json")
            if features:
                src.add_argument("--features", help="features.csv written by the features command")
            sp.add_argument("--sample-rate", type=float, default=None, help="override the manifest rate (Hz)")
            sp.add_argument("--cutoff", type=float, default=15.0, help="low-pass cutoff (Hz)")
            sp.add_argument("--filter", choices=["impulse", "bilinear"], default="impulse")
        if seed:
            sp.add_argument("--seed", type=int, default=0)

    def featured(sp, features=True):
        common(sp, features=features)
        sp.add_argument("--k", type=int, default=DEFAULT_K, help="number of selected features")
        sp.add_argument("--threshold", type=float, default=0.95, help="collinearity cutoff")

    sp = sub.add_parser("synth", help="generate a synthetic cohort")
    common(sp, data=False)
    sp.add_argument("--subjects", type=int)
    sp.add_argument("--deltas", type=_floats, required=True)
    sp.add_argument("--tasks", type=_ints, default=[1, 2])
    sp.add_argument("--trials", type=int, default=6, help="trials per hand")
    sp.add_argument("--sample-rate", type=float, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="validate a dataset and summarize it")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("segment", help="stroke counts per trial plus one segmentation dump")
    common(sp, seed=False)
    sp.add_argument("--trial", help="trial slug to dump (default: the first)")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("features", help="feature matrix, ranking and selection")
    featured(sp, features=False)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("grade-db", help="DB score per subject")
    featured(sp)
    sp.set_defaults(func=cmd_grade_db)

    sp = sub.add_parser("train", help="train one network on the whole dataset")
    sp.add_argument("model", choices=["mlp", "cnn"])
    featured(sp)
    sp.add_argument("--hidden", type=_ints, default=[12, 12])
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="k-fold or leave-one-subject-out evaluation")
    sp.add_argument("scheme", choices=["cv", "loso"])
    featured(sp)
    sp.add_argument("--model", choices=["mlp", "cnn", "baselines"], default="mlp")
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--hidden", type=_ints, default=[12, 12])
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--trees", type=int, default=100, help="random forest size")
    sp.add_argument("--bags", type=int, default=10, help="bagging members")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("task-effect", help="per-task random forest accuracy")
    featured(sp)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--trees", type=int, default=100)
    sp.add_argument("--bags", type=int, default=10)
    sp.set_defaults(func=cmd_task_effect)

    sp = sub.add_parser("compare-ei", help="agreement of grades with EI scores")
    common(sp, data=False, seed=False)
    sp.add_argument("--grades", default="table2", help="grade CSV, or 'table2' for the bundled table")
    sp.add_argument("--method", choices=["db", "mlp", "cnn", "all"], default="all")
    sp.set_defaults(func=cmd_compare_ei)

    sp = sub.add_parser("stats", help="left- vs right-hander tests on one grade column")
    common(sp, data=False, seed=False)
    sp.add_argument("--grades", default="table2")
    sp.add_argument("--column", default="mlp_acc",
                    choices=["dbs", "mlp_acc", "cnn_acc", "fourpt_mlp", "fourpt_cnn"])
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("grades", help="merge DB and LOSO reports into a grade table")
    common(sp, seed=False)
    sp.add_argument("--db", help="db_scores.csv from grade-db")
    sp.add_argument("--mlp", help="eval_loso_mlp.csv")
    sp.add_argument("--cnn", help="eval_loso_cnn.csv")
    sp.set_defaults(func=cmd_grades)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        args.func(args)
    except HandednessError as exc:
        print(f"handedness: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"handedness: I/O error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
