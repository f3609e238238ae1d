"""Stimulus sinusoid distances, channel importance and synthetic data.

The distance matrix quantifies how similar two frequency-tagging sinusoids
look after sampling at the monitor refresh rate; the channel-importance
procedure retrains the network with only 3 channel combinations on all
available data and reports |w2| per channel; the synthetic generator builds
archives from a harmonic signal model for testing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import RecordingMeta, SsvepArchive, extract_epochs, merge_trialsets
from .filterbank import FilterBankSpec, subband_stacks
from .network import NetworkConfig, init_params
from .training import StageConfig, derive_seed, train_stage

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class StimulusLayout:
    freqs_hz: tuple
    phases_rad: tuple
    refresh_rate_hz: float
    duration_s: float

    def __post_init__(self):
        object.__setattr__(self, "freqs_hz", tuple(float(f) for f in self.freqs_hz))
        object.__setattr__(self, "phases_rad", tuple(float(p) for p in self.phases_rad))
        if len(self.freqs_hz) != len(self.phases_rad):
            raise ValueError("freqs and phases must have equal length")
        if any(b <= a for a, b in zip(self.freqs_hz, self.freqs_hz[1:])):
            raise ValueError("frequencies must be sorted strictly ascending")
        if self.refresh_rate_hz <= 2.0 * max(self.freqs_hz):
            raise ValueError("refresh rate must exceed twice the highest frequency")


def stepped_phase_layout(freqs_hz, duration_s, refresh_rate_hz=60.0,
                         phase_step_rad=0.5 * np.pi) -> StimulusLayout:
    """Layout with phases 0, step, 2*step, ... (mod 2 pi) over sorted frequencies."""
    freqs = sorted(float(f) for f in freqs_hz)
    phases = [(j * phase_step_rad) % TWO_PI for j in range(len(freqs))]
    return StimulusLayout(freqs_hz=tuple(freqs), phases_rad=tuple(phases),
                          refresh_rate_hz=refresh_rate_hz, duration_s=duration_s)


def sinusoid_distance_matrix(layout: StimulusLayout) -> np.ndarray:
    """Mean absolute frame-wise distance between all pairs of tagging sinusoids.

    Frame k of stimulus (f, theta) has luminance 0.5 * (1 + sin(2 pi f k / R + theta)).
    """
    frames_f = layout.duration_s * layout.refresh_rate_hz
    frames = int(round(frames_f))
    if frames < 1 or abs(frames_f - frames) > 1e-9:
        raise ValueError(f"duration * refresh = {frames_f} is not a positive whole frame count")
    k = np.arange(frames)
    freqs = np.asarray(layout.freqs_hz)
    phases = np.asarray(layout.phases_rad)
    s = 0.5 * (1.0 + np.sin(TWO_PI * np.outer(freqs, k) / layout.refresh_rate_hz
                            + phases[:, None]))
    return np.mean(np.abs(s[:, None, :] - s[None, :, :]), axis=2)


def distance_gap_means(matrix: np.ndarray, freqs_hz, max_gap=None) -> dict:
    """Mean off-diagonal distance per absolute frequency gap (rounded to 0.1 Hz)."""
    freqs = np.asarray(freqs_hz, dtype=float)
    by_gap = {}
    m = len(freqs)
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            gap = round(abs(freqs[i] - freqs[j]), 1)
            if max_gap is not None and gap > max_gap:
                continue
            by_gap.setdefault(gap, []).append(matrix[i, j])
    return {gap: float(np.mean(vals)) for gap, vals in sorted(by_gap.items())}


@dataclass(frozen=True)
class ChannelImportance:
    channel_names: tuple
    weights: np.ndarray      # (C, 3) absolute combination weights
    totals: np.ndarray       # (C,) row sums

    def to_csv(self) -> str:
        lines = ["channel,combo_1,combo_2,combo_3,total"]
        for i, name in enumerate(self.channel_names):
            w = [float(v) for v in self.weights[i]]
            lines.append(f"{name},{w[0]!r},{w[1]!r},{w[2]!r},{float(self.totals[i])!r}")
        return "\n".join(lines) + "\n"


def channel_importance(archives, bank: FilterBankSpec, stage1: StageConfig,
                       duration_s: float) -> ChannelImportance:
    """Train with n_combinations = 3 on all data and report |w2| per channel."""
    archives = list(archives)
    first = archives[0].meta
    for a in archives:
        if a.meta.channel_names != first.channel_names:
            raise ValueError("archives must share the channel set")
    trial_sets = [extract_epochs(a, duration_s) for a in archives]
    merged = merge_trialsets(trial_sets)
    stacks = np.concatenate(
        [subband_stacks(ts.epochs, bank, a.meta.sampling_rate_hz)
         for ts, a in zip(trial_sets, archives)], axis=0)
    config = NetworkConfig(
        n_channels=merged.n_channels, n_samples=merged.n_epoch_samples,
        n_subbands=bank.n_subbands, n_classes=merged.n_classes, n_combinations=3)
    init = init_params(config, np.random.default_rng(derive_seed(stage1.seed, "importance")))
    params, _ = train_stage(merged, stacks, init, stage1)
    weights = np.abs(params.w2)
    return ChannelImportance(channel_names=first.channel_names, weights=weights,
                             totals=weights.sum(axis=1))


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    n_channels: int
    f_s: float
    duration_s: float
    harmonic_amplitudes: tuple
    harmonic_phases: tuple
    noise_std: float
    channel_mixing: np.ndarray   # (n_channels, n_harmonics)
    n_blocks: int
    seed: int
    subject_id: str = "synthetic"
    cue_duration_s: float = 0.0
    visual_latency_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "harmonic_amplitudes",
                           tuple(float(a) for a in self.harmonic_amplitudes))
        object.__setattr__(self, "harmonic_phases",
                           tuple(float(p) for p in self.harmonic_phases))
        object.__setattr__(self, "channel_mixing",
                           np.asarray(self.channel_mixing, dtype=np.float64))
        if any(a < 0 for a in self.harmonic_amplitudes):
            raise ValueError("harmonic amplitudes must be nonnegative")
        if len(self.harmonic_amplitudes) != len(self.harmonic_phases):
            raise ValueError("one phase per harmonic amplitude required")
        expect = (self.n_channels, len(self.harmonic_amplitudes))
        if self.channel_mixing.shape != expect:
            raise ValueError(f"channel_mixing must have shape {expect}")
        if not self.channel_mixing.any():
            raise ValueError("channel_mixing must not be all zero")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def generate_synthetic(spec: SynthSpec, freqs_hz) -> SsvepArchive:
    """Archive whose class-j trials are mixed harmonics of f_j plus Gaussian noise.

    Harmonic k of class j is amplitudes[k] * sin(2 pi (k+1) f_j t + phases[k]);
    channel_mixing maps the harmonic sources onto channels.  Deterministic for
    a fixed spec.seed.
    """
    freqs = [float(f) for f in freqs_hz]
    if len(freqs) != spec.n_classes:
        raise ValueError("one stimulus frequency per class required")
    n_harm = len(spec.harmonic_amplitudes)
    if max(freqs) * n_harm >= spec.f_s / 2.0:
        raise ValueError(
            f"harmonic {n_harm} of {max(freqs)} Hz aliases at f_s={spec.f_s}")
    n = int(round(spec.duration_s * spec.f_s))
    t = np.arange(n) / spec.f_s
    rng = np.random.default_rng(spec.seed)
    data = np.empty((spec.n_blocks, spec.n_classes, spec.n_channels, n), dtype=np.float32)
    for b in range(spec.n_blocks):
        for j, f in enumerate(freqs):
            sources = np.stack([
                amp * np.sin(TWO_PI * (k + 1) * f * t + phase)
                for k, (amp, phase) in enumerate(
                    zip(spec.harmonic_amplitudes, spec.harmonic_phases))
            ])
            trial = spec.channel_mixing @ sources
            if spec.noise_std > 0:
                trial = trial + rng.normal(0.0, spec.noise_std, trial.shape)
            data[b, j] = trial.astype(np.float32)
    meta = RecordingMeta(
        subject_id=spec.subject_id,
        sampling_rate_hz=spec.f_s,
        n_blocks=spec.n_blocks,
        n_targets=spec.n_classes,
        n_channels=spec.n_channels,
        n_samples=n,
        stimulus_freqs_hz=tuple(freqs),
        stimulus_phases_rad=tuple(0.0 for _ in freqs),
        channel_names=tuple(f"CH{i}" for i in range(spec.n_channels)),
        cue_duration_s=spec.cue_duration_s,
        visual_latency_s=spec.visual_latency_s,
    )
    return SsvepArchive(meta=meta, data=data)
