"""Canonical EEG archive format, epoch extraction and fold planning.

Archive files are self-describing: an 8-byte magic ``SSVEPAR1``, an 8-byte
little-endian header length, a JSON header with the recording metadata, and
the raw tensor as little-endian float32 in [block][target][channel][sample]
row-major order.  No trailing bytes are allowed.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, asdict

import numpy as np

ARCHIVE_MAGIC = b"SSVEPAR1"

_META_FIELDS = (
    "subject_id",
    "sampling_rate_hz",
    "n_blocks",
    "n_targets",
    "n_channels",
    "n_samples",
    "stimulus_freqs_hz",
    "stimulus_phases_rad",
    "channel_names",
    "cue_duration_s",
    "visual_latency_s",
)


class ArchiveError(Exception):
    """Base class for archive read/write failures."""


class ArchiveFormatError(ArchiveError):
    """Magic or header does not describe a valid archive."""


class ArchiveCorruptionError(ArchiveError):
    """Header and payload sizes disagree."""


class ArchiveDataError(ArchiveError):
    """Tensor payload contains invalid (non-finite) values."""


def round_half_away(x: float) -> int:
    """Round to nearest integer, halves away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


@dataclass(frozen=True)
class RecordingMeta:
    subject_id: str
    sampling_rate_hz: float
    n_blocks: int
    n_targets: int
    n_channels: int
    n_samples: int
    stimulus_freqs_hz: tuple
    stimulus_phases_rad: tuple
    channel_names: tuple
    cue_duration_s: float
    visual_latency_s: float

    def __post_init__(self):
        object.__setattr__(self, "stimulus_freqs_hz", tuple(float(f) for f in self.stimulus_freqs_hz))
        object.__setattr__(self, "stimulus_phases_rad", tuple(float(p) for p in self.stimulus_phases_rad))
        object.__setattr__(self, "channel_names", tuple(str(c) for c in self.channel_names))
        if self.sampling_rate_hz <= 0:
            raise ValueError("sampling_rate_hz must be positive")
        for name in ("n_blocks", "n_targets", "n_channels", "n_samples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.cue_duration_s < 0 or self.visual_latency_s < 0:
            raise ValueError("cue_duration_s and visual_latency_s must be nonnegative")
        if len(self.stimulus_freqs_hz) != self.n_targets:
            raise ValueError("stimulus_freqs_hz length must equal n_targets")
        if len(self.stimulus_phases_rad) != self.n_targets:
            raise ValueError("stimulus_phases_rad length must equal n_targets")
        if len(self.channel_names) != self.n_channels:
            raise ValueError("channel_names length must equal n_channels")
        if any(f <= 0 for f in self.stimulus_freqs_hz):
            raise ValueError("stimulus frequencies must be strictly positive")
        if len(set(self.stimulus_freqs_hz)) != self.n_targets:
            raise ValueError("stimulus frequencies must be pairwise distinct")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["stimulus_freqs_hz"] = list(self.stimulus_freqs_hz)
        d["stimulus_phases_rad"] = list(self.stimulus_phases_rad)
        d["channel_names"] = list(self.channel_names)
        return d


@dataclass(frozen=True)
class SsvepArchive:
    """One subject's raw recording: tensor [block][target][channel][sample]."""

    meta: RecordingMeta
    data: np.ndarray

    def __post_init__(self):
        expect = (self.meta.n_blocks, self.meta.n_targets, self.meta.n_channels, self.meta.n_samples)
        if self.data.shape != expect:
            raise ValueError(f"tensor shape {self.data.shape} does not match metadata {expect}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))
        if not np.all(np.isfinite(self.data)):
            raise ArchiveDataError("archive tensor contains non-finite values")


@dataclass(frozen=True)
class TrialSet:
    """Extracted epochs with labels and provenance, one row per trial."""

    epochs: np.ndarray            # (n_trials, C, N) float64
    labels: np.ndarray            # (n_trials,) int64 in [0, n_classes)
    subject_ids: tuple            # length n_trials
    block_indices: np.ndarray     # (n_trials,) int64
    duration_s: float
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        if self.epochs.ndim != 3:
            raise ValueError("epochs must be a (trials, channels, samples) array")
        n = self.epochs.shape[0]
        if not (len(self.labels) == len(self.subject_ids) == len(self.block_indices) == n):
            raise ValueError("trial metadata lengths disagree")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels must lie in [0, n_classes)")

    @property
    def n_trials(self) -> int:
        return self.epochs.shape[0]

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def n_epoch_samples(self) -> int:
        return self.epochs.shape[2]


@dataclass(frozen=True)
class Fold:
    test_block: int
    train_blocks: tuple


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)


def _meta_from_json(obj: dict) -> RecordingMeta:
    if set(obj) != set(_META_FIELDS):
        missing = set(_META_FIELDS) - set(obj)
        extra = set(obj) - set(_META_FIELDS)
        raise ArchiveFormatError(f"header fields mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    try:
        return RecordingMeta(**obj)
    except (TypeError, ValueError) as exc:
        raise ArchiveFormatError(f"invalid header: {exc}") from exc


def write_archive(archive: SsvepArchive, path) -> None:
    """Serialize an archive; two writes of the same archive are byte-identical."""
    if not np.all(np.isfinite(archive.data)):
        raise ArchiveDataError("refusing to write non-finite tensor")
    header = json.dumps(archive.meta.to_json_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(archive.data, dtype="<f4").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_archive(path) -> SsvepArchive:
    """Read and validate an archive file written by :func:`write_archive`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != ARCHIVE_MAGIC:
        raise ArchiveFormatError(f"{path}: bad magic bytes {blob[:8]!r}")
    if len(blob) < 16:
        raise ArchiveCorruptionError(f"{path}: truncated header")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_len:
        raise ArchiveCorruptionError(f"{path}: header overruns file")
    try:
        obj = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"{path}: unreadable JSON header: {exc}") from exc
    meta = _meta_from_json(obj)
    n_values = meta.n_blocks * meta.n_targets * meta.n_channels * meta.n_samples
    payload = blob[16 + header_len:]
    if len(payload) != 4 * n_values:
        raise ArchiveCorruptionError(
            f"{path}: payload is {len(payload)} bytes, header declares {4 * n_values}")
    data = np.frombuffer(payload, dtype="<f4").reshape(
        meta.n_blocks, meta.n_targets, meta.n_channels, meta.n_samples)
    if not np.all(np.isfinite(data)):
        raise ArchiveDataError(f"{path}: tensor contains non-finite values")
    return SsvepArchive(meta=meta, data=data.copy())


def extract_epochs(archive: SsvepArchive, duration_s: float) -> TrialSet:
    """Cut one epoch per (block, target), aligned past the cue and visual latency.

    The window starts at sample round((cue + latency) * f_s) and spans
    round(duration_s * f_s) samples; rounding is half away from zero.
    """
    meta = archive.meta
    start = round_half_away((meta.cue_duration_s + meta.visual_latency_s) * meta.sampling_rate_hz)
    n = round_half_away(duration_s * meta.sampling_rate_hz)
    if n <= 0:
        raise ValueError("duration_s must produce at least one sample")
    if start + n > meta.n_samples:
        raise ValueError(
            f"epoch window [{start}, {start + n}) exceeds trial length {meta.n_samples}")
    view = archive.data[:, :, :, start:start + n].astype(np.float64)
    epochs = view.reshape(meta.n_blocks * meta.n_targets, meta.n_channels, n)
    labels = np.tile(np.arange(meta.n_targets, dtype=np.int64), meta.n_blocks)
    blocks = np.repeat(np.arange(meta.n_blocks, dtype=np.int64), meta.n_targets)
    return TrialSet(
        epochs=epochs,
        labels=labels,
        subject_ids=(meta.subject_id,) * (meta.n_blocks * meta.n_targets),
        block_indices=blocks,
        duration_s=float(duration_s),
        n_classes=meta.n_targets,
    )


def select_channels(trials: TrialSet, names, meta: RecordingMeta) -> TrialSet:
    """Restrict epochs to the named channels, in the requested order."""
    index = {name: i for i, name in enumerate(meta.channel_names)}
    try:
        rows = [index[name] for name in names]
    except KeyError as exc:
        raise KeyError(f"unknown channel name {exc.args[0]!r}") from None
    return TrialSet(
        epochs=trials.epochs[:, rows, :].copy(),
        labels=trials.labels,
        subject_ids=trials.subject_ids,
        block_indices=trials.block_indices,
        duration_s=trials.duration_s,
        n_classes=trials.n_classes,
    )


def plan_leave_one_block_out(n_blocks: int) -> FoldPlan:
    if n_blocks < 2:
        raise ValueError("leave-one-block-out needs at least 2 blocks")
    folds = tuple(
        Fold(test_block=k, train_blocks=tuple(b for b in range(n_blocks) if b != k))
        for k in range(n_blocks)
    )
    return FoldPlan(folds=folds)


def merge_trialsets(sets) -> TrialSet:
    """Concatenate trial sets that share channel count, epoch length and classes."""
    sets = list(sets)
    if not sets:
        raise ValueError("cannot merge zero trial sets")
    first = sets[0]
    for ts in sets[1:]:
        if ts.epochs.shape[1:] != first.epochs.shape[1:]:
            raise ValueError("trial sets have mismatched epoch shapes")
        if ts.n_classes != first.n_classes:
            raise ValueError("trial sets have mismatched class counts")
        if ts.duration_s != first.duration_s:
            raise ValueError("trial sets have mismatched durations")
    if len(sets) == 1:
        return first
    ids = []
    for ts in sets:
        ids.extend(ts.subject_ids)
    return TrialSet(
        epochs=np.concatenate([ts.epochs for ts in sets], axis=0),
        labels=np.concatenate([ts.labels for ts in sets]),
        subject_ids=tuple(ids),
        block_indices=np.concatenate([ts.block_indices for ts in sets]),
        duration_s=first.duration_s,
        n_classes=first.n_classes,
    )


def filter_blocks(trials: TrialSet, blocks) -> TrialSet:
    """Keep only trials recorded in the given blocks."""
    keep = np.isin(trials.block_indices, list(blocks))
    return TrialSet(
        epochs=trials.epochs[keep],
        labels=trials.labels[keep],
        subject_ids=tuple(s for s, k in zip(trials.subject_ids, keep) if k),
        block_indices=trials.block_indices[keep],
        duration_s=trials.duration_s,
        n_classes=trials.n_classes,
    )
