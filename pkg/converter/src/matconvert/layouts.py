"""Source layouts of the two public MAT releases.

Both datasets tag 40 targets with frequencies 8..15.8 Hz in 0.2 Hz steps and
a 0.5 pi phase step between adjacent frequencies, record 64 channels at a
250 Hz (post-downsampling) rate, and start each trial with a 0.5 s cue.  They
differ in tensor axis order, block count, trial length and visual latency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np


def montage_64() -> tuple:
    text = resources.files("matconvert").joinpath("data/channels64.txt").read_text()
    names = tuple(line.strip() for line in text.splitlines() if line.strip())
    if len(names) != 64:
        raise RuntimeError(f"montage table lists {len(names)} channels, expected 64")
    return names


def stimulus_tables(n_targets: int = 40):
    freqs = tuple(round(8.0 + 0.2 * j, 10) for j in range(n_targets))
    phases = tuple((j * 0.5 * math.pi) % (2.0 * math.pi) for j in range(n_targets))
    return freqs, phases


@dataclass(frozen=True)
class SourceLayout:
    kind: str
    mat_variable: str
    axis_order: tuple          # permutation mapping MAT axes -> (block, target, channel, sample)
    n_blocks: int
    n_targets: int
    n_channels: int
    n_samples_options: tuple   # allowed per-trial sample counts
    sampling_rate_hz: float
    cue_duration_s: float
    visual_latency_s: float

    def expected_mat_shapes(self):
        """Allowed raw MAT tensor shapes, in the source axis order."""
        shapes = []
        for n in self.n_samples_options:
            full = {"block": self.n_blocks, "target": self.n_targets,
                    "channel": self.n_channels, "sample": n}
            shapes.append(tuple(full[axis] for axis in self.source_axes))
        return shapes

    @property
    def source_axes(self):
        """Axis names of the raw MAT tensor, in storage order."""
        inverse = [None] * 4
        names = ("block", "target", "channel", "sample")
        for dest, src in enumerate(self.axis_order):
            inverse[src] = names[dest]
        return tuple(inverse)


# benchmark: data[channel][sample][target][block], 6 blocks of 6 s trials
BENCHMARK = SourceLayout(
    kind="benchmark",
    mat_variable="data",
    axis_order=(3, 2, 0, 1),
    n_blocks=6,
    n_targets=40,
    n_channels=64,
    n_samples_options=(1500,),
    sampling_rate_hz=250.0,
    cue_duration_s=0.5,
    visual_latency_s=0.14,
)

# BETA: data.EEG[channel][sample][block][target], 4 blocks; trials are 3 s for
# the first 15 subjects (2 s stimulation) and 4 s for the rest
BETA = SourceLayout(
    kind="beta",
    mat_variable="data",
    axis_order=(2, 3, 0, 1),
    n_blocks=4,
    n_targets=40,
    n_channels=64,
    n_samples_options=(750, 1000),
    sampling_rate_hz=250.0,
    cue_duration_s=0.5,
    visual_latency_s=0.13,
)

LAYOUTS = {"benchmark": BENCHMARK, "beta": BETA}


def layout_for(kind: str) -> SourceLayout:
    try:
        return LAYOUTS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}; expected benchmark or beta") from None


def to_canonical(layout: SourceLayout, tensor: np.ndarray) -> np.ndarray:
    """Reorder a raw MAT tensor into [block][target][channel][sample]."""
    return np.transpose(tensor, layout.axis_order)
