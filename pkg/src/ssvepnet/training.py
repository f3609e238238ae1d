"""Adam optimization, the two-stage training protocol and checkpoint files.

Determinism contract: a stage's RNG is np.random.default_rng(cfg.seed); each
epoch draws one permutation, then forward dropout masks are drawn batch by
batch from the same stream.  Stage seeds for derived runs (per subject, per
fold) come from derive_seed(), a stable hash, so results do not depend on
process or execution order.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, asdict, replace

import numpy as np

from .dataset import TrialSet
from .network import (DropoutSpec, NetworkConfig, PARAM_FIELDS, Parameters,
                      backward, forward, init_params, loss)

CHECKPOINT_MAGIC = b"SSVEPCK1"


class CheckpointFormatError(Exception):
    """Checkpoint file is not readable as written."""


def derive_seed(base: int, *parts) -> int:
    """Stable 64-bit seed from a base seed and a tag tuple (order matters)."""
    text = repr((int(base),) + tuple(str(p) for p in parts)).encode("utf-8")
    digest = hashlib.blake2s(text, digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    batch_size: int
    learning_rate: float = 1e-4
    l2_lambda: float = 0.001
    dropout: DropoutSpec = DropoutSpec()
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class AdamState:
    first_moment: Parameters
    second_moment: Parameters
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Parameters) -> "AdamState":
        return cls(first_moment=params.map(np.zeros_like),
                   second_moment=params.map(np.zeros_like), t=0)


@dataclass(frozen=True)
class Provenance:
    stage: str
    subject: str
    fold_index: int
    final_loss: float


@dataclass(frozen=True)
class Checkpoint:
    config: NetworkConfig
    stage_config: StageConfig
    params: Parameters
    provenance: Provenance


def adam_step(params: Parameters, grads: Parameters, state: AdamState,
              cfg: StageConfig):
    """One bias-corrected Adam update; returns (new params, new state)."""
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    t = state.t + 1
    m = state.first_moment.map(lambda m_, g: b1 * m_ + (1 - b1) * g, grads)
    v = state.second_moment.map(lambda v_, g: b2 * v_ + (1 - b2) * g * g, grads)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    stepped = []
    for p, m_, v_ in zip(params.fields(), m.fields(), v.fields()):
        stepped.append(p - cfg.learning_rate * (m_ / c1) / (np.sqrt(v_ / c2) + eps))
    return Parameters(*stepped), AdamState(first_moment=m, second_moment=v, t=t)


def train_stage(trials: TrialSet, stacks: np.ndarray, init: Parameters,
                cfg: StageConfig):
    """Run one training stage; returns (final parameters, per-epoch mean loss).

    Trials are reshuffled each epoch and split into batches of cfg.batch_size
    (the last batch may be smaller); one Adam step per batch on the mean batch
    loss.  Bit-deterministic for a fixed (trials, stacks, init, cfg).
    """
    if trials.n_trials == 0:
        raise ValueError("cannot train on an empty trial set")
    if stacks.shape[0] != trials.n_trials or stacks.shape[1:3] != trials.epochs.shape[1:]:
        raise ValueError("stacks are not aligned with the trial set")
    labels = trials.labels
    rng = np.random.default_rng(cfg.seed)
    params = init
    state = AdamState.zeros_like(init)
    history = []
    n = trials.n_trials
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cache = forward(params, stacks[idx], cfg.dropout, rng)
            batch_losses.append(loss(cache, labels[idx], params, cfg.l2_lambda))
            grads = backward(cache, labels[idx], params, cfg.l2_lambda)
            params, state = adam_step(params, grads, state, cfg)
        history.append(float(np.mean(batch_losses)))
    return params, history


def two_stage_train(global_trials: TrialSet, global_stacks: np.ndarray,
                    per_subject: dict, stage1: StageConfig, stage2: StageConfig,
                    config: NetworkConfig):
    """Global stage then a per-subject fine-tune from the global parameters.

    per_subject maps subject_id -> (TrialSet, stacks).  Each fine-tune starts
    from the stage-1 parameters with a fresh Adam state and a seed derived
    from (stage2.seed, subject_id).  Returns (global params, {subject: params}).
    """
    for subject, (trials, _) in per_subject.items():
        if trials.n_trials == 0:
            raise ValueError(f"subject {subject!r} has an empty training set")
    init = init_params(config, np.random.default_rng(derive_seed(stage1.seed, "init")))
    global_params, _ = train_stage(global_trials, global_stacks, init, stage1)
    fine = {}
    for subject in sorted(per_subject):
        trials, stacks = per_subject[subject]
        cfg = replace(stage2, seed=derive_seed(stage2.seed, "subject", subject))
        fine[subject], _ = train_stage(trials, stacks, global_params, cfg)
    return global_params, fine


# ---------------------------------------------------------------------------
# checkpoint files: magic, little-endian header length, JSON header with a
# tensor manifest in PARAM_FIELDS order, then float64 little-endian blobs.

def save_checkpoint(cp: Checkpoint, path) -> None:
    cp.params.check_shapes(cp.config)
    manifest = []
    offset = 0
    blobs = []
    for name in PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(cp.params, name), dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = {
        "config": asdict(cp.config),
        "stage_config": asdict(cp.stage_config),
        "provenance": asdict(cp.provenance),
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path, expect_config: NetworkConfig = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes {blob[:8]!r}")
    if len(blob) < 16:
        raise CheckpointFormatError(f"{path}: truncated header")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if len(blob) < 16 + header_len:
        raise CheckpointFormatError(f"{path}: header overruns file")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header: {exc}") from exc
    try:
        config = NetworkConfig(**header["config"])
        stage_raw = dict(header["stage_config"])
        stage_raw["dropout"] = DropoutSpec(**stage_raw["dropout"])
        stage_config = StageConfig(**stage_raw)
        prov = Provenance(**header["provenance"])
        manifest = header["tensors"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: malformed header: {exc}") from exc
    if [m["name"] for m in manifest] != list(PARAM_FIELDS):
        raise CheckpointFormatError(f"{path}: tensor manifest order is wrong")
    body = blob[16 + header_len:]
    arrays = {}
    offset = 0
    for m in manifest:
        if m["offset"] != offset:
            raise CheckpointFormatError(f"{path}: bad offset for {m['name']}")
        count = int(np.prod(m["shape"])) if m["shape"] else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise CheckpointFormatError(f"{path}: truncated tensor {m['name']}")
        arrays[m["name"]] = np.frombuffer(
            body[offset:offset + nbytes], dtype="<f8").reshape(m["shape"]).copy()
        offset += nbytes
    if offset != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - offset} trailing bytes")
    params = Parameters(**arrays)
    params.check_shapes(config)
    if expect_config is not None and config != expect_config:
        raise ValueError(f"checkpoint config {config} does not match expected {expect_config}")
    return Checkpoint(config=config, stage_config=stage_config, params=params,
                      provenance=prov)
