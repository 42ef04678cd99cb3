"""Low-pass filtering, numerical derivatives and zero-crossing stroke segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import CutoffOutOfRange, SignalTooShort, TrialTooShort
from .ingest import Trial, TrialKey


@dataclass
class Signal:
    values: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class FilterDesign:
    """Second-order sections ``(b0, b1, b2, 1, a1, a2)`` and how they combine."""

    sos: np.ndarray
    structure: str  # "cascade" or "parallel"


def butterworth_design(cutoff_hz: float, sample_rate_hz: float, order: int = 4,
                       method: str = "impulse") -> FilterDesign:
    """Digital Butterworth low-pass as second-order sections.

    ``method="impulse"``: impulse-invariant mapping of the analog prototype,
    realized as parallel sections and renormalized to unity DC gain. Its magnitude
    tracks the analog ``1/sqrt(1 + (f/fc)^(2n))`` closely below Nyquist.

    ``method="bilinear"``: bilinear transform prewarped at the cutoff, as a cascade
    of biquads. Exact -3 dB at the cutoff, steeper than analog above it.
    """
    nyq = sample_rate_hz / 2.0
    if not 0 < cutoff_hz < nyq:
        raise CutoffOutOfRange(f"cutoff {cutoff_hz} Hz outside (0, {nyq}) Hz")
    if order < 2 or order % 2:
        raise ValueError("order must be even and >= 2")
    n = order
    if method == "bilinear":
        k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
        sections = []
        for i in range(1, n // 2 + 1):
            q = 1.0 / (2.0 * math.sin(math.pi * (2 * i - 1) / (2 * n)))
            norm = 1.0 / (1.0 + k / q + k * k)
            b0 = k * k * norm
            sections.append([b0, 2 * b0, b0, 1.0, 2 * (k * k - 1) * norm, (1 - k / q + k * k) * norm])
        return FilterDesign(np.array(sections), "cascade")
    if method == "impulse":
        wc = 2 * math.pi * cutoff_hz
        T = 1.0 / sample_rate_hz
        poles = wc * np.exp(1j * math.pi * (2 * np.arange(1, n + 1) + n - 1) / (2 * n))
        sections = []
        # upper-half-plane poles; each pairs with its conjugate
        for i in range(n // 2):
            p = poles[i]
            r = wc**n / np.prod([p - q for j, q in enumerate(poles) if j != i])
            zp = np.exp(p * T)
            sections.append([
                T * 2 * r.real,
                -T * 2 * (r * np.conj(zp)).real,
                0.0,
                1.0,
                -2 * zp.real,
                abs(zp) ** 2,
            ])
        sos = np.array(sections)
        dc = sum(s[:3].sum() / s[3:].sum() for s in sos)
        sos[:, :3] /= dc
        return FilterDesign(sos, "parallel")
    raise ValueError(f"unknown design method {method!r}")


def _run(design: FilterDesign, x: np.ndarray) -> np.ndarray:
    # states start at the steady state for a constant input equal to x[0]
    if design.structure == "cascade":
        y = x
        for s in design.sos:
            b, a = s[:3], s[3:]
            y, _ = sps.lfilter(b, a, y, zi=sps.lfilter_zi(b, a) * y[0])
        return y
    out = np.zeros_like(x)
    for s in design.sos:
        b, a = s[:3], s[3:]
        zi = sps.lfilter_zi(b, a) * x[0]
        out += sps.lfilter(b, a, x, zi=zi)[0]
    return out


def butterworth_lowpass(sig: Signal, cutoff_hz: float = 15.0, order: int = 4,
                        zero_phase: bool = True, method: str = "impulse") -> Signal:
    """Butterworth low-pass; forward-backward when ``zero_phase`` (squared magnitude, no lag).

    Edges are extended by odd reflection of length ``3 * order``.
    """
    design = butterworth_design(cutoff_hz, sig.sample_rate_hz, order, method)
    x = sig.values
    pad = 3 * order
    if len(x) <= pad:
        raise SignalTooShort(f"signal of {len(x)} samples; need more than {pad}")
    ext = np.concatenate([2 * x[0] - x[pad:0:-1], x, 2 * x[-1] - x[-2:-pad - 2:-1]])
    y = _run(design, ext)
    if zero_phase:
        y = _run(design, y[::-1])[::-1]
    return Signal(y[pad:-pad], sig.sample_rate_hz)


def differentiate(sig: Signal) -> Signal:
    """Central differences inside, one-sided at the ends; scaled by the sample rate."""
    if len(sig.values) < 3:
        raise SignalTooShort("differentiation needs at least 3 samples")
    return Signal(np.gradient(sig.values, 1.0 / sig.sample_rate_hz), sig.sample_rate_hz)


# --------------------------------------------------------------------------- strokes


@dataclass
class SegmentConfig:
    cutoff_hz: float = 15.0
    order: int = 4
    zero_phase: bool = True
    method: str = "impulse"
    min_stroke_samples: int = 4


@dataclass
class Stroke:
    key: TrialKey
    index: int
    start: int  # half-open sample range [start, end) into the trial
    end: int
    t: np.ndarray
    x: np.ndarray  # filtered
    y: np.ndarray  # filtered
    pressure: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray
    jy: np.ndarray

    def __len__(self):
        return self.end - self.start

    @property
    def jerk(self) -> np.ndarray:
        return np.hypot(self.jx, self.jy)


@dataclass
class TrialKinematics:
    """Whole-trial filtered channels and derivatives."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    pressure: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    jx: np.ndarray
    jy: np.ndarray

    @property
    def vy_corrected(self) -> np.ndarray:
        return self.vy - self.vy.mean()


def trial_kinematics(trial: Trial, config: SegmentConfig | None = None) -> TrialKinematics:
    config = config or SegmentConfig()
    fs = trial.sample_rate_hz
    need = max(3 * config.order + 1, config.min_stroke_samples)
    if trial.n_samples < need:
        raise TrialTooShort(f"{trial.key.slug()}: {trial.n_samples} samples, need {need}")

    def lp(v):
        return butterworth_lowpass(Signal(v, fs), config.cutoff_hz, config.order,
                                   config.zero_phase, config.method)

    xs, ys = lp(trial.x), lp(trial.y)
    vx, vy = differentiate(xs), differentiate(ys)
    ax, ay = differentiate(vx), differentiate(vy)
    jx, jy = differentiate(ax), differentiate(ay)
    return TrialKinematics(trial.t, xs.values, ys.values, trial.pressure, vx.values, vy.values,
                           ax.values, ay.values, jx.values, jy.values)


def zero_crossings(v: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Indices i where the sign of v changes between i and i+1.

    Values within ``rel_tol * max(1, max|v|)`` of zero carry the previous sign.
    """
    tol = rel_tol * max(1.0, float(np.max(np.abs(v))) if len(v) else 0.0)
    s = np.sign(v)
    s[np.abs(v) <= tol] = 0
    nz = np.flatnonzero(s)
    if len(nz) == 0:
        return np.array([], dtype=int)
    # forward-fill zeros; leading zeros take the first nonzero sign
    idx = np.where(s != 0, np.arange(len(s)), 0)
    np.maximum.accumulate(idx, out=idx)
    filled = s[idx]
    filled[: nz[0]] = s[nz[0]]
    return np.flatnonzero(filled[:-1] != filled[1:])


def stroke_boundaries(n: int, crossings: np.ndarray, min_len: int) -> list[tuple[int, int]]:
    cuts = [0] + [int(c) for c in crossings if 0 < c < n] + [n]
    spans = [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]
    merged: list[list[int]] = []
    for a, b in spans:
        if merged and (b - a) < min_len:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    # a short leading stroke has no predecessor; fold it into its successor
    if len(merged) > 1 and merged[0][1] - merged[0][0] < min_len:
        merged[1][0] = merged[0][0]
        merged.pop(0)
    return [(a, b) for a, b in merged]


def segment_trial(trial: Trial, config: SegmentConfig | None = None) -> list[Stroke]:
    """Split a trial into strokes at zero-crossings of mean-corrected vertical velocity."""
    config = config or SegmentConfig()
    kin = trial_kinematics(trial, config)
    spans = stroke_boundaries(trial.n_samples, zero_crossings(kin.vy_corrected),
                              config.min_stroke_samples)
    strokes = []
    for i, (a, b) in enumerate(spans):
        sl = slice(a, b)
        strokes.append(Stroke(
            key=trial.key, index=i, start=a, end=b,
            t=kin.t[sl], x=kin.x[sl], y=kin.y[sl], pressure=kin.pressure[sl],
            vx=kin.vx[sl], vy=kin.vy[sl], ax=kin.ax[sl], ay=kin.ay[sl],
            jx=kin.jx[sl], jy=kin.jy[sl],
        ))
    return strokes


def segmentation_dump(trial: Trial, config: SegmentConfig | None = None) -> str:
    """CSV text ``t,x_filt,y_filt,vy_meancorr,stroke_id`` for plotting."""
    config = config or SegmentConfig()
    kin = trial_kinematics(trial, config)
    spans = stroke_boundaries(trial.n_samples, zero_crossings(kin.vy_corrected),
                              config.min_stroke_samples)
    ids = np.empty(trial.n_samples, dtype=int)
    for i, (a, b) in enumerate(spans):
        ids[a:b] = i
    vyc = kin.vy_corrected
    lines = ["t,x_filt,y_filt,vy_meancorr,stroke_id"]
    for j in range(trial.n_samples):
        lines.append(f"{kin.t[j]!r},{kin.x[j]!r},{kin.y[j]!r},{vyc[j]!r},{ids[j]}")
    return "\n".join(lines) + "\n"


def segment_dataset(dataset, config: SegmentConfig | None = None) -> list[tuple[Trial, list[Stroke]]]:
    """Segment every trial of a loaded dataset in a fixed order."""
    return [(tr, segment_trial(tr, config)) for tr in dataset.iter_trials()]
