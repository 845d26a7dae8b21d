"""Frame-wise convolutional video encoder and its self-supervised pretext.

The backbone is a stack of (conv, ReLU) blocks applied to each frame
independently; a clip of T frames maps to a T x H' x W' x C' feature map.
Pre-training is time-contrastive: pooled features of temporally close
frames attract, far frames and other clips' frames repel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .rng import RngState
from .tensor import ShapeError, Tensor

REF_CHANNELS = (3, 16, 32, 32)
REF_STRIDES = (2, 2, 1)
REF_KERNEL = 3


@dataclass
class ConvBlock:
    w: Tensor  # (C_out, C_in, k, k)
    b: Tensor  # (C_out,)
    stride: int
    padding: int


class Backbone:
    """Per-frame conv encoder; ``frozen`` gates gradient flow to weights."""

    def __init__(self, blocks: list[ConvBlock], channels: tuple[int, ...], kernel: int):
        self.blocks = blocks
        self.channels = channels
        self.kernel = kernel
        self.frozen = False

    @classmethod
    def create(
        cls,
        rng: RngState,
        channels: Sequence[int] = REF_CHANNELS,
        strides: Sequence[int] = REF_STRIDES,
        kernel: int = REF_KERNEL,
    ) -> "Backbone":
        if len(strides) != len(channels) - 1:
            raise ValueError("strides must have one entry per block")
        blocks = []
        for c_in, c_out, stride in zip(channels[:-1], channels[1:], strides):
            scale = math.sqrt(2.0 / (c_in * kernel * kernel))
            w = Tensor(rng.normal((c_out, c_in, kernel, kernel)) * scale, requires_grad=True)
            b = Tensor(np.zeros(c_out), requires_grad=True)
            blocks.append(ConvBlock(w, b, stride, kernel // 2))
        return cls(blocks, tuple(channels), kernel)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def in_channels(self) -> int:
        return self.channels[0]

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    def freeze(self) -> "Backbone":
        self.frozen = True
        for block in self.blocks:
            block.w.requires_grad = False
            block.b.requires_grad = False
        return self

    def unfreeze(self) -> "Backbone":
        self.frozen = False
        for block in self.blocks:
            block.w.requires_grad = True
            block.b.requires_grad = True
        return self

    def named_parameters(self, prefix: str = "backbone") -> dict[str, Tensor]:
        out = {}
        for i, block in enumerate(self.blocks):
            out[f"{prefix}.block{i}.w"] = block.w
            out[f"{prefix}.block{i}.b"] = block.b
        return out

    def copy(self) -> "Backbone":
        """Deep copy with the same frozen flag."""
        blocks = [
            ConvBlock(
                Tensor(blk.w.data.copy(), requires_grad=blk.w.requires_grad),
                Tensor(blk.b.data.copy(), requires_grad=blk.b.requires_grad),
                blk.stride,
                blk.padding,
            )
            for blk in self.blocks
        ]
        dup = Backbone(blocks, self.channels, self.kernel)
        dup.frozen = self.frozen
        return dup

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        for block in self.blocks:
            h = T.conv_output_size(h, self.kernel, block.stride, block.padding)
            w = T.conv_output_size(w, self.kernel, block.stride, block.padding)
        return h, w

    def apply(self, x: Tensor, hooks: Mapping[int, Callable[[Tensor], Tensor]] | None = None) -> Tensor:
        """Run (N, C, H, W) through all blocks.

        ``hooks`` maps junction indices to transforms: junction j sits
        before block j, junction n_blocks sits after the last block.
        """
        h = x
        for j, block in enumerate(self.blocks):
            if hooks and j in hooks:
                h = hooks[j](h)
            pre = T.add(
                T.conv2d(h, block.w, stride=block.stride, padding=block.padding),
                T.reshape(block.b, (block.b.size, 1, 1)),
            )
            h = T.relu(pre)
        if hooks and self.n_blocks in hooks:
            h = hooks[self.n_blocks](h)
        return h


@dataclass
class FeatureMap:
    """Encoder output for one clip: (T, H', W', C') values plus provenance."""

    values: Tensor
    domain: str = "unknown"
    adapted: bool = False

    def __post_init__(self):
        if self.values.ndim != 4:
            raise ShapeError(f"FeatureMap expects rank-4 values, got {self.values.shape}")
        if not np.isfinite(self.values.data).all():
            raise T.NumericError("FeatureMap values must be finite")


def _check_frames(frames: np.ndarray, in_channels: int) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ShapeError(f"frames must be (T, H, W, C), got {frames.shape}")
    if frames.shape[3] != in_channels:
        raise ShapeError(
            f"frames have {frames.shape[3]} channels, backbone expects {in_channels}"
        )
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ValueError("frame values must lie in [0, 1]")
    return frames


def encode_batch(
    backbone: Backbone,
    frames: np.ndarray,
    hooks: Mapping[int, Callable[[Tensor], Tensor]] | None = None,
) -> Tensor:
    """Encode a (N, H, W, C) stack of frames to (N, H', W', C')."""
    x = Tensor(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)))
    y = backbone.apply(x, hooks)
    return T.transpose(y, (0, 2, 3, 1))


def encode_frozen(backbone: Backbone, frames, domain: str = "unknown") -> FeatureMap:
    """Frozen-stream encoding of one clip's frames (T, H, W, C) in [0, 1]."""
    if not backbone.frozen:
        raise ValueError("encode_frozen requires a frozen backbone")
    if isinstance(frames, Tensor):
        frames = frames.data
    frames = _check_frames(frames, backbone.in_channels)
    return FeatureMap(encode_batch(backbone, frames), domain=domain, adapted=False)


# ---------------------------------------------------------------------------
# time-contrastive pretext


def _triplet_indices(t_len: int, rng: RngState, window: int) -> tuple[int, int, int]:
    anchor = rng.randint(t_len)
    delta = 1 + rng.randint(window)
    candidates = [i for i in (anchor + delta, anchor - delta) if 0 <= i < t_len]
    positive = candidates[rng.randint(len(candidates))]
    far = 0 if anchor > (t_len - 1) / 2 else t_len - 1
    return anchor, positive, far


def pretext_loss(
    encode: Callable[[np.ndarray], Tensor],
    clips,
    rng: RngState,
    temperature: float = 0.1,
    window: int = 2,
) -> tuple[Tensor, dict]:
    """Time-contrastive InfoNCE over a batch of clips.

    ``encode`` maps (N, H, W, C) frames to (N, H', W', C') features. Each
    clip contributes an anchor frame, a temporally close positive, and the
    farthest frame of the same clip as an extra negative; other clips'
    positives serve as in-batch negatives.
    """
    b = len(clips)
    frames = []
    for clip in clips:
        a, p, f = _triplet_indices(clip.frames.shape[0], rng, window)
        frames.append((clip.frames[a], clip.frames[p], clip.frames[f]))
    stacked = np.stack(
        [fr[0] for fr in frames] + [fr[1] for fr in frames] + [fr[2] for fr in frames]
    )
    feats = encode(stacked)  # (3B, H', W', C')
    pooled = T.tmean(feats, axis=(1, 2))  # (3B, C')
    pooled = T.l2_normalize(pooled, axis=1)
    # split rows without an indexing primitive: multiply by selector matrices
    eye = np.eye(3 * b)
    a_rows = T.matmul(Tensor(eye[:b]), pooled)
    p_rows = T.matmul(Tensor(eye[b : 2 * b]), pooled)
    f_rows = T.matmul(Tensor(eye[2 * b :]), pooled)
    inv_tau = 1.0 / temperature
    cross = T.mul(T.matmul(a_rows, T.transpose(p_rows)), Tensor(inv_tau))  # (B, B)
    far_col = T.mul(
        T.tsum(T.mul(a_rows, f_rows), axis=1, keepdims=True), Tensor(inv_tau)
    )  # (B, 1)
    denom = T.logsumexp(T.concat([cross, far_col], axis=1), axis=1)  # (B,)
    pos = T.tsum(T.mul(cross, Tensor(np.eye(b))), axis=1)  # diag
    loss = T.tmean(T.add(denom, T.neg(pos)))

    with np.errstate(over="ignore"):
        c = cross.data
    off = c - np.diag(np.diag(c)) - np.eye(b) * 1e18
    stats = {
        "pos_sim": float(np.mean(np.diag(c)) * temperature),
        "hard_neg_sim": float(
            np.mean(np.maximum(off.max(axis=1), far_col.data[:, 0])) * temperature
        ),
    }
    return loss, stats


def pretext_pretrain(
    rng: RngState,
    human_clips,
    epochs: int,
    lr: float = 3e-6,
    batch_size: int = 16,
    temperature: float = 0.1,
    window: int = 2,
    backbone: Backbone | None = None,
) -> tuple[Backbone, list[float]]:
    """Train a fresh backbone on human clips; returns it frozen.

    The per-epoch mean loss history is returned alongside so callers can
    track improvement. The default step size is deliberately gentle: this
    contrastive objective needs only a handful of discriminative channels,
    and pushing it hard prunes everything else, leaving features too poor
    for any downstream use (a genuine representation collapse at this
    scale).
    """
    if not human_clips:
        raise ValueError("pretext_pretrain: empty clip list")
    for clip in human_clips:
        if clip.domain != "human":
            raise ValueError(f"pretext_pretrain: clip {clip.pair_id} is not human-domain")
    if backbone is None:
        backbone = Backbone.create(rng)
    backbone.unfreeze()
    params = backbone.named_parameters()
    adam = AdamState.for_params(params, lr=lr)
    n = len(human_clips)
    bsz = min(batch_size, n)
    history: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n - bsz + 1, bsz):
            batch = [human_clips[i] for i in order[start : start + bsz]]
            loss, _ = pretext_loss(
                lambda fr: encode_batch(backbone, fr), batch, rng, temperature, window
            )
            zero_grads(params)
            loss.backward()
            adam_step(params, collect_grads(params), adam)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    backbone.freeze()
    return backbone, history
