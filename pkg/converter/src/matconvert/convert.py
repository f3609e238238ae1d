"""MAT-to-archive conversion and spot-check verification."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.io import loadmat

from .archive import read_header, read_value, write_archive_file
from .layouts import SourceLayout, layout_for, montage_64, stimulus_tables, to_canonical


class DimensionMismatchError(Exception):
    """The MAT tensor does not look like the declared dataset kind."""


def _extract_tensor(raw: dict, layout: SourceLayout, path) -> np.ndarray:
    if layout.mat_variable not in raw:
        names = [k for k in raw if not k.startswith("__")]
        raise DimensionMismatchError(
            f"{path}: variable {layout.mat_variable!r} not found; file has {names}")
    var = raw[layout.mat_variable]
    if layout.kind == "beta":
        # BETA wraps the tensor in a struct: data.EEG plus supplementary info
        try:
            var = var["EEG"][0, 0]
        except (IndexError, KeyError, TypeError, ValueError):
            raise DimensionMismatchError(
                f"{path}: expected a struct with an EEG field for kind 'beta'") from None
    tensor = np.asarray(var)
    allowed = layout.expected_mat_shapes()
    if tensor.ndim != 4:
        raise DimensionMismatchError(
            f"{path}: expected a 4-D tensor shaped one of {allowed} for kind "
            f"{layout.kind!r}, found {tensor.ndim}-D {tensor.shape}")
    if tensor.shape not in allowed:
        raise DimensionMismatchError(
            f"{path}: tensor shape {tensor.shape} does not match kind "
            f"{layout.kind!r}; expected one of {allowed} "
            f"(axes {layout.source_axes})")
    return tensor


def build_meta(layout: SourceLayout, n_samples: int, subject_id: str) -> dict:
    freqs, phases = stimulus_tables(layout.n_targets)
    return {
        "subject_id": subject_id,
        "sampling_rate_hz": layout.sampling_rate_hz,
        "n_blocks": layout.n_blocks,
        "n_targets": layout.n_targets,
        "n_channels": layout.n_channels,
        "n_samples": n_samples,
        "stimulus_freqs_hz": list(freqs),
        "stimulus_phases_rad": list(phases),
        "channel_names": list(montage_64()),
        "cue_duration_s": layout.cue_duration_s,
        "visual_latency_s": layout.visual_latency_s,
    }


def convert(in_path, dataset_kind: str, out_path) -> dict:
    """Convert one subject MAT file; returns the metadata written."""
    layout = layout_for(dataset_kind)
    raw = loadmat(in_path)
    tensor = _extract_tensor(raw, layout, in_path)
    canonical = np.ascontiguousarray(to_canonical(layout, tensor), dtype=np.float32)
    if not np.all(np.isfinite(canonical)):
        raise ValueError(f"{in_path}: tensor contains non-finite values")
    subject_id = os.path.splitext(os.path.basename(in_path))[0]
    meta = build_meta(layout, canonical.shape[3], subject_id)
    write_archive_file(meta, canonical, out_path)
    return meta


@dataclass
class VerifyReport:
    n_checked: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def summary(self) -> str:
        if self.ok:
            return f"{self.n_checked}/{self.n_checked} sampled coordinates match"
        lines = [f"{self.n_checked - len(self.mismatches)}/{self.n_checked} "
                 f"sampled coordinates match; mismatches:"]
        for coord, src, got in self.mismatches:
            lines.append(f"  {coord}: source {src!r} archive {got!r}")
        return "\n".join(lines)


def verify_full(archive_path, in_path, dataset_kind: str) -> VerifyReport:
    """Compare the complete tensor against the MAT source at float32 precision."""
    layout = layout_for(dataset_kind)
    raw = loadmat(in_path)
    canonical = to_canonical(layout, _extract_tensor(raw, layout, in_path)).astype(np.float32)
    meta, offset = read_header(archive_path)
    with open(archive_path, "rb") as fh:
        fh.seek(offset)
        payload = fh.read()
    stored = np.frombuffer(payload, dtype="<f4").reshape(canonical.shape)
    report = VerifyReport(n_checked=int(stored.size))
    bad = np.argwhere(stored != canonical)
    for coord in bad[:20]:
        coord = tuple(int(v) for v in coord)
        report.mismatches.append((coord, np.float32(canonical[coord]), stored[coord]))
    if len(bad) > 20:
        report.mismatches.append((("...",), np.float32(0), np.float32(0)))
    return report


def verify(archive_path, in_path, dataset_kind: str, n_samples: int = 100,
           seed: int = 0) -> VerifyReport:
    """Spot-check random coordinates of the archive against the MAT source."""
    layout = layout_for(dataset_kind)
    raw = loadmat(in_path)
    tensor = _extract_tensor(raw, layout, in_path)
    canonical = to_canonical(layout, tensor)
    meta, offset = read_header(archive_path)
    rng = np.random.default_rng(seed)
    report = VerifyReport()
    for _ in range(n_samples):
        b = int(rng.integers(meta["n_blocks"]))
        j = int(rng.integers(meta["n_targets"]))
        c = int(rng.integers(meta["n_channels"]))
        s = int(rng.integers(meta["n_samples"]))
        source = np.float32(canonical[b, j, c, s])
        got = read_value(archive_path, meta, offset, b, j, c, s)
        report.n_checked += 1
        if not (source == got or (np.isnan(source) and np.isnan(got))):
            report.mismatches.append(((b, j, c, s), source, got))
    return report
