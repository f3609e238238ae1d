"""The fixed five-layer model with exact forward and hand-derived backward passes.

Layer chain for one trial (C channels, N samples, N_s sub-bands, M classes,
K = n_combinations):

    volume (C,N,N_s) --w1--> z1 (C,N) --w2--> z2 (N,K)
        --stride-2 two-tap conv + ReLU--> z3 (len3,K)
        --length-10 FIR conv, valid--> z4 (len4,K)
        --fully connected--> logits (M) --softmax--> s

with len3 = floor((N-2)/2) + 1 and len4 = len3 - (fir_length - 1).
All tensors are float64; forward/backward operate on whole batches with a
leading trial axis.  Inverted dropout (mask scaled by 1/(1-p)) is applied to
z2, z3 and z4 when enabled; masks are drawn from the caller's generator in
that order, so a seeded generator reproduces them exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filterbank import SubbandStack

PARAM_FIELDS = ("w1", "w2", "w3", "w4", "w_fc", "b_fc")

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class NetworkConfig:
    n_channels: int
    n_samples: int
    n_subbands: int
    n_classes: int
    n_combinations: int = 0          # 0 means the default N_s * M
    fir_length: int = 10
    downsample_stride: int = 2
    tap_length: int = 2

    def __post_init__(self):
        if self.n_combinations == 0:
            object.__setattr__(self, "n_combinations", self.n_subbands * self.n_classes)
        if min(self.n_channels, self.n_samples, self.n_subbands, self.n_classes) < 1:
            raise ValueError("all network dimensions must be positive")
        if self.downsample_stride != 2 or self.tap_length != 2:
            raise ValueError("downsample stride and tap length are fixed at 2")
        if self.fir_length < 1:
            raise ValueError("fir_length must be positive")
        if self.len3 <= self.fir_length - 1:
            raise ValueError(
                f"N={self.n_samples} gives len3={self.len3}, too short for "
                f"fir_length={self.fir_length}")

    @property
    def len3(self) -> int:
        return (self.n_samples - 2) // 2 + 1

    @property
    def len4(self) -> int:
        return self.len3 - (self.fir_length - 1)

    @property
    def fc_inputs(self) -> int:
        return self.len4 * self.n_combinations


@dataclass(frozen=True)
class Parameters:
    """All trainable weights, in the fixed serialization order PARAM_FIELDS."""

    w1: np.ndarray       # (N_s,) sub-band combination
    w2: np.ndarray       # (C, K) channel combinations
    w3: np.ndarray       # (K, 2, K) two-tap filters, full depth
    w4: np.ndarray       # (K, fir_length, K) FIR filters, full depth
    w_fc: np.ndarray     # (len4 * K, M)
    b_fc: np.ndarray     # (M,)

    def fields(self):
        return tuple(getattr(self, name) for name in PARAM_FIELDS)

    def squared_norm(self) -> float:
        return float(sum(np.sum(f * f) for f in self.fields()))

    def check_shapes(self, config: NetworkConfig) -> None:
        k = config.n_combinations
        expect = {
            "w1": (config.n_subbands,),
            "w2": (config.n_channels, k),
            "w3": (k, config.tap_length, k),
            "w4": (k, config.fir_length, k),
            "w_fc": (config.fc_inputs, config.n_classes),
            "b_fc": (config.n_classes,),
        }
        for name in PARAM_FIELDS:
            got = getattr(self, name).shape
            if got != expect[name]:
                raise ValueError(f"{name} has shape {got}, expected {expect[name]}")

    def map(self, fn, other: "Parameters" = None) -> "Parameters":
        if other is None:
            return Parameters(*(fn(f) for f in self.fields()))
        return Parameters(*(fn(f, g) for f, g in zip(self.fields(), other.fields())))


@dataclass(frozen=True)
class DropoutSpec:
    p_after_l2: float = 0.1
    p_after_l3: float = 0.1
    p_after_l4: float = 0.95
    enabled: bool = True

    def __post_init__(self):
        for p in (self.p_after_l2, self.p_after_l3, self.p_after_l4):
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout probabilities must lie in [0, 1)")


DROPOUT_DISABLED = DropoutSpec(0.0, 0.0, 0.0, enabled=False)


@dataclass(frozen=True)
class ForwardCache:
    """Everything backward needs, batch-first.

    z2, z3 and z4 are the values actually consumed by the next layer, i.e.
    post-dropout when dropout is enabled; pre3 is the layer-3 pre-activation.
    Masks already include the 1/(1-p) scale (None when dropout is off).
    """

    volumes: np.ndarray    # (B, C, N, N_s)
    z1: np.ndarray         # (B, C, N)
    z2: np.ndarray         # (B, N, K)
    pre3: np.ndarray       # (B, len3, K)
    z3: np.ndarray         # (B, len3, K)
    z4: np.ndarray         # (B, len4, K)
    logits: np.ndarray     # (B, M)
    softmax: np.ndarray    # (B, M)
    mask2: np.ndarray | None
    mask3: np.ndarray | None
    mask4: np.ndarray | None
    fir_length: int


def init_params(config: NetworkConfig, rng: np.random.Generator) -> Parameters:
    """First layer all ones, every other entry i.i.d. Normal(0, 0.01 variance)."""
    std = 0.1
    k = config.n_combinations
    return Parameters(
        w1=np.ones(config.n_subbands),
        w2=rng.normal(0.0, std, (config.n_channels, k)),
        w3=rng.normal(0.0, std, (k, config.tap_length, k)),
        w4=rng.normal(0.0, std, (k, config.fir_length, k)),
        w_fc=rng.normal(0.0, std, (config.fc_inputs, config.n_classes)),
        b_fc=rng.normal(0.0, std, config.n_classes),
    )


def _as_batch(stack) -> np.ndarray:
    if isinstance(stack, SubbandStack):
        vol = stack.volume
    else:
        vol = np.asarray(stack, dtype=np.float64)
    if vol.ndim == 3:
        vol = vol[np.newaxis]
    if vol.ndim != 4:
        raise ValueError("input must be (C, N, N_s) or (trials, C, N, N_s)")
    return vol


def forward(params: Parameters, stack, dropout: DropoutSpec = DROPOUT_DISABLED,
            rng: np.random.Generator = None) -> ForwardCache:
    """Run the five layers; accepts a single stack or a batch of them."""
    vol = _as_batch(stack)
    batch, n_ch, n_s, n_sub = vol.shape
    k = params.w2.shape[1]
    fir = params.w4.shape[1]
    if params.w1.shape[0] != n_sub or params.w2.shape[0] != n_ch:
        raise ValueError("parameter shapes do not match the input volume")
    len3 = (n_s - 2) // 2 + 1
    len4 = len3 - (fir - 1)
    if len4 < 1:
        raise ValueError("input too short for the FIR layer")
    if params.w_fc.shape[0] != len4 * k:
        raise ValueError("fully connected weights do not match the input length")
    use_drop = dropout.enabled and (dropout.p_after_l2 or dropout.p_after_l3 or dropout.p_after_l4)
    if use_drop and rng is None:
        raise ValueError("dropout requires a random generator")

    z1 = np.einsum("bcnr,r->bcn", vol, params.w1)
    z2 = np.einsum("bcn,ck->bnk", z1, params.w2)
    mask2 = mask3 = mask4 = None
    if use_drop:
        mask2 = _draw_mask(rng, z2.shape, dropout.p_after_l2)
        z2 = z2 * mask2
    pairs = z2[:, :2 * len3, :].reshape(batch, len3, 2 * k)
    pre3 = pairs @ params.w3.reshape(k, 2 * k).T
    z3 = np.maximum(pre3, 0.0)
    if use_drop:
        mask3 = _draw_mask(rng, z3.shape, dropout.p_after_l3)
        z3 = z3 * mask3
    windows = sliding_window_view(z3, fir, axis=1)         # (B, len4, K, fir)
    z4 = np.einsum("btdw,kwd->btk", windows, params.w4, optimize=True)
    if use_drop:
        mask4 = _draw_mask(rng, z4.shape, dropout.p_after_l4)
        z4 = z4 * mask4
    logits = z4.reshape(batch, len4 * k) @ params.w_fc + params.b_fc
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    return ForwardCache(volumes=vol, z1=z1, z2=z2, pre3=pre3, z3=z3, z4=z4,
                        logits=logits, softmax=softmax,
                        mask2=mask2, mask3=mask3, mask4=mask4, fir_length=fir)


def _draw_mask(rng, shape, p):
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def _labels_array(label, batch: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if y.shape != (batch,):
        raise ValueError(f"labels shape {y.shape} does not match batch size {batch}")
    return y


def loss(cache: ForwardCache, label, params: Parameters, l2_lambda: float) -> float:
    """Mean cross entropy over the batch plus one L2 penalty over all weights."""
    y = _labels_array(label, cache.softmax.shape[0])
    if y.min() < 0 or y.max() >= cache.softmax.shape[1]:
        raise ValueError("label out of range")
    picked = cache.softmax[np.arange(len(y)), y]
    ce = float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))
    return ce + l2_lambda * params.squared_norm()


def backward(cache: ForwardCache, label, params: Parameters, l2_lambda: float) -> Parameters:
    """Exact gradients of :func:`loss` w.r.t. every parameter field."""
    vol = cache.volumes
    batch, n_ch, n_s, _ = vol.shape
    k = params.w2.shape[1]
    fir = params.w4.shape[1]
    if fir != cache.fir_length or cache.z2.shape[2] != k:
        raise ValueError("cache does not match these parameters")
    len3 = (n_s - 2) // 2 + 1
    len4 = len3 - (fir - 1)
    y = _labels_array(label, batch)

    dlogits = cache.softmax.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch

    flat = cache.z4.reshape(batch, len4 * k)
    g_wfc = flat.T @ dlogits
    g_bfc = dlogits.sum(axis=0)

    dz4 = (dlogits @ params.w_fc.T).reshape(batch, len4, k)
    if cache.mask4 is not None:
        dz4 = dz4 * cache.mask4
    windows = sliding_window_view(cache.z3, fir, axis=1)   # (B, len4, K, fir)
    g_w4 = np.einsum("btk,btdw->kwd", dz4, windows, optimize=True)

    spread = (dz4 @ params.w4.reshape(k, fir * k)).reshape(batch, len4, fir, k)
    dz3 = np.zeros_like(cache.z3)
    for tau in range(fir):
        dz3[:, tau:tau + len4, :] += spread[:, :, tau, :]
    if cache.mask3 is not None:
        dz3 = dz3 * cache.mask3
    dpre3 = dz3 * (cache.pre3 > 0.0)

    pairs = cache.z2[:, :2 * len3, :].reshape(batch * len3, 2 * k)
    g_w3 = (dpre3.reshape(batch * len3, k).T @ pairs).reshape(k, 2, k)

    unpaired = (dpre3 @ params.w3.reshape(k, 2 * k)).reshape(batch, len3, 2, k)
    dz2 = np.zeros_like(cache.z2)
    dz2[:, 0:2 * len3:2, :] = unpaired[:, :, 0, :]
    dz2[:, 1:2 * len3:2, :] = unpaired[:, :, 1, :]
    if cache.mask2 is not None:
        dz2 = dz2 * cache.mask2

    g_w2 = np.einsum("bcn,bnk->ck", cache.z1, dz2)
    dz1 = np.einsum("bnk,ck->bcn", dz2, params.w2)
    g_w1 = np.einsum("bcnr,bcn->r", vol, dz1)

    grads = Parameters(w1=g_w1, w2=g_w2, w3=g_w3, w4=g_w4, w_fc=g_wfc, b_fc=g_bfc)
    if l2_lambda:
        grads = grads.map(lambda g, p: g + 2.0 * l2_lambda * p, params)
    return grads


def predict(params: Parameters, stack) -> np.ndarray | int:
    """Dropout-free argmax prediction; ties resolve to the lowest class index."""
    single = isinstance(stack, SubbandStack) or np.asarray(stack).ndim == 3
    cache = forward(params, stack)
    picks = np.argmax(cache.softmax, axis=1)
    return int(picks[0]) if single else picks
