"""Synthetic pen-trace cohorts from an oscillatory handwriting model.

Each trial is a pair of coupled oscillators riding on a horizontal drift::

    x(t) = v t + A_x(t) sin(phase(t) + phi_x) + noise
    y(t) =       A_y(t) sin(phase(t) + phi_y) + noise

``phase`` advances by pi per half-cycle; every half-cycle draws its own duration
and amplitude (lognormal jitter), so stroke-to-stroke variability is controlled.
The non-dominant hand scales amplitude, slowness, jitter, pressure spread and noise
by ``1 + delta * task_gain``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, InvalidProfile
from .ingest import (
    DEFAULT_SAMPLE_RATE,
    DatasetManifest,
    Group,
    Hand,
    Side,
    SubjectMeta,
    Trial,
    TrialEntry,
    TrialKey,
    manifest_to_json,
    serialize_trial,
)

TRIAL_SECONDS = 8.0
FILTER_CUTOFF_HZ = 15.0
HESITATION_SECONDS = 0.2
MAX_HESITATION_PROB = 0.9
HESITATION_PHASE = 0.2  # rad; peak phase rate ~6.3 rad/s just beats the ~4.4 rad/s stroke rate
_HAND_CODE = {Hand.DOMINANT: 0, Hand.NON_DOMINANT: 1}


def default_task_gain(task_id: int) -> float:
    """Increasing ramp: task 1 is the least discriminative, task 7 the most."""
    return 0.5 + (task_id - 1) / 12.0


@dataclass
class SubjectProfile:
    subject_id: str
    delta: float
    drift_velocity: float = 10.0  # mm/s
    amp_x: float = 2.5  # mm
    amp_y: float = 5.0  # mm
    freq: float = 0.62  # Hz
    phase_x: float = math.pi / 2
    phase_y: float = 0.0
    pressure_mean: float = 0.6
    pressure_sd: float = 0.04
    noise_sd: float = 0.03  # mm
    amp_jitter: float = 0.08  # lognormal sigma per half-cycle
    freq_jitter: float = 0.06
    hesitation_rate: float = 1.5  # excess ND hesitations per half-cycle at delta * gain = 1
    handedness: Side = Side.RIGHT
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.delta <= 1.0:
            raise InvalidProfile(f"{self.subject_id}: delta {self.delta} outside [0, 1]")
        if self.amp_x <= 0 or self.amp_y <= 0:
            raise InvalidProfile(f"{self.subject_id}: amplitudes must be positive")
        if not 0 < self.freq < FILTER_CUTOFF_HZ:
            raise InvalidProfile(f"{self.subject_id}: frequency must lie in (0, {FILTER_CUTOFF_HZ}) Hz")
        if min(self.pressure_sd, self.noise_sd, self.amp_jitter, self.freq_jitter,
               self.hesitation_rate) < 0:
            raise InvalidProfile(f"{self.subject_id}: spreads must be non-negative")


def draw_profile(subject_id: str, delta: float, seed: int, subject_index: int) -> SubjectProfile:
    """Random base oscillator parameters for one subject."""
    rng = np.random.default_rng([seed, subject_index, 7919])
    return SubjectProfile(
        subject_id=subject_id,
        delta=float(delta),
        drift_velocity=float(rng.uniform(9.5, 10.5)),
        amp_x=float(rng.uniform(2.4, 2.6)),
        amp_y=float(rng.uniform(4.9, 5.1)),
        freq=float(rng.uniform(0.6, 0.65)),
        phase_x=float(math.pi / 2 + rng.uniform(-0.1, 0.1)),
        phase_y=float(rng.uniform(-0.1, 0.1)),
        pressure_mean=float(rng.uniform(0.58, 0.62)),
        pressure_sd=0.04,
        noise_sd=0.03,
        amp_jitter=0.08,
        freq_jitter=0.06,
        hesitation_rate=1.5,
        handedness=Side.LEFT if rng.random() < 0.5 else Side.RIGHT,
        seed=int(seed) * 1000 + subject_index,
    )


def sub_seed(profile: SubjectProfile, task_id: int, hand: Hand, trial_index: int) -> list[int]:
    return [profile.seed, int(task_id), _HAND_CODE[hand], int(trial_index)]


def generate_trial(profile: SubjectProfile, task_id: int, hand: Hand, trial_index: int,
                   task_gain: float | None = None, sample_rate_hz: float = DEFAULT_SAMPLE_RATE,
                   seed: Sequence[int] | None = None) -> Trial:
    profile.validate()
    hand = Hand.parse(hand)
    gain = default_task_gain(task_id) if task_gain is None else task_gain
    f = 1.0 + profile.delta * gain if hand is Hand.NON_DOMINANT else 1.0
    rng = np.random.default_rng(list(seed) if seed is not None else sub_seed(profile, task_id, hand, trial_index))

    n = int(round(TRIAL_SECONDS * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    base_half = 0.5 / (profile.freq / f)
    n_half = int(math.ceil(TRIAL_SECONDS / base_half * 1.5)) + 4
    durations = base_half * np.exp(profile.freq_jitter * f * rng.standard_normal(n_half))
    amps = np.exp(profile.amp_jitter * f * rng.standard_normal(n_half))
    edges = np.concatenate([[0.0], np.cumsum(durations)])
    start = rng.uniform(0.0, base_half)
    phase = np.pi * np.interp(t + start, edges, np.arange(n_half + 1))
    centers = 0.5 * (edges[:-1] + edges[1:])
    env = np.interp(t + start, centers, amps)
    phase += _hesitations(t, edges - start, rng, min(MAX_HESITATION_PROB, profile.hesitation_rate * (f - 1.0)))

    ax = profile.amp_x * f
    ay = profile.amp_y * f
    noise = profile.noise_sd * f
    x = profile.drift_velocity * t + ax * env * np.sin(phase + profile.phase_x)
    y = ay * env * np.sin(phase + profile.phase_y)
    x = x + noise * rng.standard_normal(n)
    y = y + noise * rng.standard_normal(n)

    psd = profile.pressure_sd * f
    kernel = np.ones(9) / 9.0
    pnoise = np.convolve(rng.standard_normal(n + 8), kernel, mode="valid") * 3.0
    pressure = np.clip(profile.pressure_mean + psd * pnoise, 0.0, 1.0)
    return Trial(profile.subject_id, int(task_id), hand, int(trial_index), t, x, y, pressure,
                 float(sample_rate_hz))


def _hesitations(t: np.ndarray, edges: np.ndarray, rng: np.random.Generator, prob: float) -> np.ndarray:
    """Phase wobbles that briefly reverse the pen, splitting a stroke in three.

    Each half-cycle hosts one with probability ``prob``; the random draws are made
    for every half-cycle regardless, so ``prob = 0`` leaves the stream aligned.
    """
    out = np.zeros_like(t)
    n = len(edges) - 1
    hit = rng.random(n)
    where = rng.uniform(0.25, 0.75, n)
    width = HESITATION_SECONDS
    for k in np.flatnonzero(hit < prob):
        c = edges[k] + where[k] * (edges[k + 1] - edges[k])
        m = (t >= c - width / 2) & (t < c + width / 2)
        out[m] += HESITATION_PHASE * np.sin(2 * np.pi * (t[m] - c + width / 2) / width)
    return out


# --------------------------------------------------------------------------- cohorts


@dataclass
class CohortConfig:
    deltas: list[float]
    tasks: list[int] = field(default_factory=lambda: [1, 2])
    trials_per_hand: int = 6
    seed: int = 0
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    task_gains: dict[int, float] | None = None

    @property
    def n_subjects(self) -> int:
        return len(self.deltas)

    def validate(self) -> None:
        if self.trials_per_hand < 1:
            raise DataError("trials_per_hand must be >= 1")
        if not self.deltas:
            raise DataError("cohort needs at least one subject")
        for t in self.tasks:
            if not 1 <= int(t) <= 7:
                raise DataError(f"task {t} outside 1..7")

    def gain(self, task_id: int) -> float:
        if self.task_gains and task_id in self.task_gains:
            return float(self.task_gains[task_id])
        return default_task_gain(task_id)

    def to_json(self) -> str:
        d = asdict(self)
        if self.task_gains is not None:
            d["task_gains"] = {str(k): v for k, v in self.task_gains.items()}
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CohortConfig":
        d = json.loads(text)
        if d.get("task_gains") is not None:
            d["task_gains"] = {int(k): float(v) for k, v in d["task_gains"].items()}
        return cls(**d)


def synthetic_ei(delta: float, side: Side) -> int:
    mag = int(math.floor((10.0 + 80.0 * delta) / 10.0 + 0.5)) * 10
    return -mag if side is Side.LEFT else mag


def group_for_delta(delta: float) -> Group:
    if delta >= 0.6:
        return Group.U
    if delta > 0.15:
        return Group.PU
    return Group.A


def cohort_profiles(config: CohortConfig) -> list[SubjectProfile]:
    width = max(2, len(str(config.n_subjects)))
    return [draw_profile(f"S{i + 1:0{width}d}", d, config.seed, i) for i, d in enumerate(config.deltas)]


def generate_cohort_trials(config: CohortConfig):
    """Yield ``(subject_meta, trial)`` pairs in a fixed order, without touching disk."""
    config.validate()
    for prof in cohort_profiles(config):
        meta = SubjectMeta(prof.subject_id, group_for_delta(prof.delta), prof.handedness,
                           ei_score=synthetic_ei(prof.delta, prof.handedness), delta=prof.delta)
        for task in config.tasks:
            for hand in (Hand.DOMINANT, Hand.NON_DOMINANT):
                for k in range(1, config.trials_per_hand + 1):
                    yield meta, generate_trial(prof, task, hand, k, config.gain(task), config.sample_rate_hz)


def generate_cohort(config: CohortConfig, out_dir: str | Path) -> Path:
    """Write trial CSVs, ``manifest.json`` and ``cohort.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        subjects: dict[str, SubjectMeta] = {}
        entries = []
        for meta, tr in generate_cohort_trials(config):
            subjects.setdefault(meta.subject_id, meta)
            rel = Path(meta.subject_id) / f"task{tr.task_id}_{tr.hand.value}_{tr.trial_index}.csv"
            _atomic_write(out / rel, serialize_trial(tr))
            entries.append(TrialEntry(tr.key, out / rel))
        manifest = DatasetManifest(list(subjects.values()), entries, config.sample_rate_hz)
        _atomic_write(out / "manifest.json", manifest_to_json(manifest, out))
        _atomic_write(out / "cohort.json", config.to_json())
    except OSError as exc:
        raise DataError(f"cannot write cohort to {out}: {exc}") from None
    return out / "manifest.json"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
