import dataclasses

import numpy as np
import pytest

from handedness.errors import InvalidProfile
from handedness.ingest import Hand, load_manifest
from handedness.kinematics import segment_trial
from handedness.synth import (
    CohortConfig,
    SubjectProfile,
    default_task_gain,
    generate_cohort,
    generate_trial,
    synthetic_ei,
)
from handedness.ingest import Side


def test_delta_zero_hands_coincide():
    prof = SubjectProfile("S01", 0.0, seed=4)
    d = generate_trial(prof, 3, Hand.DOMINANT, 1, seed=[1, 2, 3])
    nd = generate_trial(prof, 3, Hand.NON_DOMINANT, 1, seed=[1, 2, 3])
    for c in ("t", "x", "y", "pressure"):
        np.testing.assert_array_equal(getattr(d, c), getattr(nd, c))


def test_delta_one_amplitude_shift():
    prof = SubjectProfile("S01", 1.0, seed=2)
    amp = {}
    for hand in Hand:
        amp[hand] = np.mean([np.ptp(generate_trial(prof, 1, hand, k).y) / 2 for k in range(1000)])
    assert amp[Hand.NON_DOMINANT] / amp[Hand.DOMINANT] - 1 >= 0.25


def test_stroke_count_band():
    counts = []
    for delta in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        for s in range(3):
            prof = SubjectProfile("S", delta, seed=s)
            for task in range(1, 8):
                for hand in Hand:
                    for k in (1, 2, 3):
                        counts.append(len(segment_trial(generate_trial(prof, task, hand, k))))
    counts = np.array(counts)
    assert 10 <= counts.mean() <= 16
    assert counts.min() >= 6 and counts.max() <= 24, f"range {counts.min()}..{counts.max()}"


@pytest.mark.parametrize("field,value", [("delta", 1.5), ("amp_y", 0.0), ("freq", 20.0), ("noise_sd", -1.0)])
def test_invalid_profile(field, value):
    prof = dataclasses.replace(SubjectProfile("S", 0.5), **{field: value})
    with pytest.raises(InvalidProfile):
        generate_trial(prof, 1, Hand.DOMINANT, 1)


def test_task_gain_ramp():
    gains = [default_task_gain(t) for t in range(1, 8)]
    assert all(a < b for a, b in zip(gains, gains[1:]))


def test_synthetic_ei():
    assert synthetic_ei(0.0, Side.RIGHT) == 10
    assert synthetic_ei(0.8, Side.LEFT) == -70
    assert synthetic_ei(1.0, Side.RIGHT) == 90


def test_cohort_counting_and_determinism(tmp_path):
    cfg = CohortConfig(deltas=[0, 0.2, 0.4, 0.6, 0.8, 1.0], tasks=[1, 2], seed=11)
    a = generate_cohort(cfg, tmp_path / "a").parent
    b = generate_cohort(cfg, tmp_path / "b").parent
    files_a = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(files_a) == 6 * 2 * 2 * 6
    assert files_a == sorted(p.relative_to(b) for p in b.rglob("*.csv"))
    for rel in files_a + [a / "manifest.json", a / "cohort.json"]:
        rel = rel.relative_to(a) if rel.is_absolute() else rel
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
    ds = load_manifest(a)
    assert len(ds.trials) == 144
    assert ds.subjects["S06"].ei_score in (-90, 90)
    assert CohortConfig.from_json((a / "cohort.json").read_text()) == cfg
