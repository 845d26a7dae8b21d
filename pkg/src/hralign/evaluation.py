"""Representation quality checks for adapted vs frozen encoders.

Retrieval asks whether paired human/robot clips embed closest to each
other among all held-out candidates. The downstream report freezes the
encoder (adapters included) and trains small heads on robot features: a
linear task probe, a two-layer regressor predicting the next latent
effector position, and a tube-following success proxy over whole clips.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dataset import PairedDemo, VideoClip
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .rng import RngState
from .task_query import embed_texts
from .tensor import Tensor
from .trainer import ModelCheckpoint

TUBE_RADIUS = 0.1


@dataclass
class RetrievalReport:
    tag: str
    r2h_recall1: float
    r2h_recall5: float
    h2r_recall1: float
    h2r_recall5: float
    r2h_mrr: float
    h2r_mrr: float

    def __post_init__(self):
        for name in ("r2h_recall1", "r2h_recall5", "h2r_recall1", "h2r_recall5"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of range: {value}")
        if self.r2h_recall5 < self.r2h_recall1 or self.h2r_recall5 < self.h2r_recall1:
            raise ValueError("recall@5 cannot be below recall@1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_text(self) -> str:
        return (
            f"retrieval [{self.tag}]\n"
            f"  robot->human  recall@1 {self.r2h_recall1:.4f}  "
            f"recall@5 {self.r2h_recall5:.4f}  mrr {self.r2h_mrr:.4f}\n"
            f"  human->robot  recall@1 {self.h2r_recall1:.4f}  "
            f"recall@5 {self.h2r_recall5:.4f}  mrr {self.h2r_mrr:.4f}\n"
        )


@dataclass
class DownstreamReport:
    tag: str
    probe_accuracy: float
    bc_mse: float
    success_rate: float
    n_train_clips: int
    n_heldout_clips: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def to_text(self) -> str:
        return (
            f"downstream [{self.tag}] ({self.n_train_clips} train / "
            f"{self.n_heldout_clips} held-out clips)\n"
            f"  probe accuracy {self.probe_accuracy:.4f}\n"
            f"  behavior-clone mse {self.bc_mse:.6f}\n"
            f"  success proxy {self.success_rate:.4f}\n"
        )


# ---------------------------------------------------------------------------
# embedding extraction


def _clip_indices(clip: VideoClip, t: int, seed: int) -> list[int]:
    # keyed by pair id only, so both clips of a pair sample the same frames
    from .dataset import sample_frame_indices

    rng = RngState(seed).derive("eval-frames", clip.pair_id)
    return sample_frame_indices(clip.length, t, rng)


def embed_clip(
    checkpoint: ModelCheckpoint,
    clip: VideoClip,
    description: str | None,
    adapted: bool,
    seed: int = 311,
    t: int | None = None,
) -> np.ndarray:
    """One pooled embedding per clip.

    The adapted path runs the adapter stack with the checkpoint's pooling
    policy (task-aware when it was trained with language). The frozen path
    is the unadapted model: frozen stream, uniform pooling.
    """
    from .alignment import pool_many
    from .encoder import encode_batch

    config = checkpoint.config
    t = t or config.frames
    idx = _clip_indices(clip, t, seed)
    frames = clip.frames[idx]
    hooks = None
    if adapted and checkpoint.stack is not None and len(checkpoint.stack):
        hooks = checkpoint.stack.hooks()
    feat = encode_batch(checkpoint.backbone, frames, hooks)
    n, h, w, c = feat.shape
    positions = T.reshape(feat, (1, n * h * w, c))
    queries = None
    if adapted and checkpoint.embedder is not None and description is not None:
        queries = embed_texts(checkpoint.embedder, [description]).detach()
    pooled = pool_many(positions, queries, normalize=config.normalize)
    return pooled.data[0].copy()


def embed_pairs(
    checkpoint: ModelCheckpoint, pairs: list[PairedDemo], adapted: bool, seed: int = 311
) -> tuple[np.ndarray, np.ndarray]:
    """Human-stream and robot-stream embeddings, row i = pair i."""
    human = np.stack(
        [
            embed_clip(checkpoint, p.human, p.description.text, adapted=adapted, seed=seed)
            for p in pairs
        ]
    )
    robot = np.stack(
        [
            embed_clip(checkpoint, p.robot, p.description.text, adapted=adapted, seed=seed)
            for p in pairs
        ]
    )
    return human, robot


def _retrieval_stats(scores: np.ndarray) -> tuple[float, float, float]:
    """recall@1, recall@5, MRR when the true match of row i is column i."""
    n = scores.shape[0]
    diag = scores[np.arange(n), np.arange(n)]
    ranks = 1 + (scores > diag[:, None]).sum(axis=1)
    recall1 = float((ranks == 1).mean())
    recall5 = float((ranks <= 5).mean())
    mrr = float((1.0 / ranks).mean())
    return recall1, recall5, mrr


def eval_retrieval(
    checkpoint: ModelCheckpoint,
    heldout_pairs: list[PairedDemo],
    adapted: bool = True,
    seed: int = 311,
) -> RetrievalReport:
    """Cross-domain pair retrieval by dot product over pooled embeddings."""
    if len(heldout_pairs) < 2:
        raise ValueError(f"retrieval needs at least 2 pairs, got {len(heldout_pairs)}")
    human, robot = embed_pairs(checkpoint, heldout_pairs, adapted=adapted, seed=seed)
    scores_r2h = robot @ human.T
    r2h = _retrieval_stats(scores_r2h)
    h2r = _retrieval_stats(scores_r2h.T)
    return RetrievalReport(
        tag="adapted" if adapted else "frozen",
        r2h_recall1=r2h[0],
        r2h_recall5=r2h[1],
        h2r_recall1=h2r[0],
        h2r_recall5=h2r[1],
        r2h_mrr=r2h[2],
        h2r_mrr=h2r[2],
    )


# ---------------------------------------------------------------------------
# downstream heads


def standardize(train: np.ndarray, other: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0, keepdims=True)
    sd = train.std(axis=0, keepdims=True) + 1e-8
    return (train - mu) / sd, (other - mu) / sd


def train_linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    n_classes: int,
    epochs: int = 300,
    lr: float = 0.05,
) -> float:
    """Multinomial logistic probe; returns held-out accuracy."""
    train_x, test_x = standardize(train_x, test_x)
    w = Tensor(np.zeros((train_x.shape[1], n_classes)), requires_grad=True)
    b = Tensor(np.zeros(n_classes), requires_grad=True)
    params = {"w": w, "b": b}
    adam = AdamState.for_params(params, lr=lr)
    onehot = np.zeros((len(train_y), n_classes))
    onehot[np.arange(len(train_y)), train_y] = 1.0
    x_t = Tensor(train_x)
    for _ in range(epochs):
        logits = T.add(T.matmul(x_t, w), b)
        loss = T.tmean(
            T.add(T.logsumexp(logits, axis=1), T.neg(T.tsum(T.mul(logits, Tensor(onehot)), axis=1)))
        )
        zero_grads(params)
        loss.backward()
        adam_step(params, collect_grads(params), adam)
    pred = np.argmax(test_x @ w.data + b.data, axis=1)
    return float((pred == test_y).mean())


def train_bc_head(
    train_x: np.ndarray,
    train_y: np.ndarray,
    seed: int,
    hidden: int = 32,
    epochs: int = 400,
    lr: float = 1e-2,
):
    """Two-layer regression head; returns a predict(features) closure."""
    rng = RngState(seed)
    d = train_x.shape[1]
    out = train_y.shape[1]
    w1 = Tensor(rng.normal((d, hidden)) * np.sqrt(2.0 / d), requires_grad=True)
    b1 = Tensor(np.zeros(hidden), requires_grad=True)
    w2 = Tensor(rng.normal((hidden, out)) * np.sqrt(1.0 / hidden), requires_grad=True)
    b2 = Tensor(np.zeros(out), requires_grad=True)
    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    adam = AdamState.for_params(params, lr=lr)
    x_t = Tensor(train_x)
    y_t = Tensor(train_y)
    for _ in range(epochs):
        h = T.relu(T.add(T.matmul(x_t, w1), b1))
        pred = T.add(T.matmul(h, w2), b2)
        err = T.add(pred, T.neg(y_t))
        loss = T.tmean(T.mul(err, err))
        zero_grads(params)
        loss.backward()
        adam_step(params, collect_grads(params), adam)

    def predict(x: np.ndarray) -> np.ndarray:
        hidden_act = np.maximum(x @ w1.data + b1.data, 0.0)
        return hidden_act @ w2.data + b2.data

    return predict


def _frame_features(
    checkpoint: ModelCheckpoint, clip: VideoClip, adapted: bool
) -> np.ndarray:
    """(T_len, C) per-frame mean-pooled features of a whole clip."""
    from .encoder import encode_batch

    hooks = None
    if adapted and checkpoint.stack is not None and len(checkpoint.stack):
        hooks = checkpoint.stack.hooks()
    feat = encode_batch(checkpoint.backbone, clip.frames, hooks)
    return feat.data.mean(axis=(1, 2))


def _split_clips(clips: list[VideoClip], heldout_frac: float) -> tuple[list[int], list[int]]:
    by_task: dict[int, list[int]] = {}
    order = sorted(range(len(clips)), key=lambda i: (clips[i].task_id, clips[i].pair_id))
    for i in order:
        by_task.setdefault(clips[i].task_id, []).append(i)
    train_idx, held_idx = [], []
    for task_id in sorted(by_task):
        group = by_task[task_id]
        n_held = min(max(int(round(heldout_frac * len(group))), 1), len(group) - 1)
        train_idx.extend(group[: len(group) - n_held])
        held_idx.extend(group[len(group) - n_held :])
    return train_idx, held_idx


def eval_downstream(
    checkpoint: ModelCheckpoint,
    robot_clips: list[VideoClip],
    adapted: bool = True,
    seed: int = 412,
    heldout_frac: float = 0.25,
    tube_radius: float = TUBE_RADIUS,
) -> DownstreamReport:
    """Frozen-feature probe, behavior cloning, and rollout success proxy.

    No gradient ever reaches the encoder or adapters here; features are
    extracted once as plain arrays and only the small heads train.
    """
    for clip in robot_clips:
        if clip.domain != "robot":
            raise ValueError(f"downstream eval expects robot clips, got {clip.domain!r}")
    train_idx, held_idx = _split_clips(robot_clips, heldout_frac)
    if not train_idx or not held_idx:
        raise ValueError("downstream split too small")
    feats = [_frame_features(checkpoint, clip, adapted) for clip in robot_clips]
    task_ids = sorted({c.task_id for c in robot_clips})
    class_of = {t: i for i, t in enumerate(task_ids)}

    clip_feat = np.stack([f.mean(axis=0) for f in feats])
    labels = np.array([class_of[c.task_id] for c in robot_clips])
    probe_acc = train_linear_probe(
        clip_feat[train_idx],
        labels[train_idx],
        clip_feat[held_idx],
        labels[held_idx],
        n_classes=len(task_ids),
    )

    def bc_samples(indices):
        xs, ys = [], []
        for i in indices:
            clip = robot_clips[i]
            if clip.positions is None:
                raise ValueError(
                    f"clip pair {clip.pair_id} carries no latent trajectory; "
                    "behavior cloning needs generated or latent-annotated data"
                )
            xs.append(feats[i][:-1])
            ys.append(clip.positions[1:])
        return np.concatenate(xs), np.concatenate(ys)

    train_x, train_y = bc_samples(train_idx)
    held_x, held_y = bc_samples(held_idx)
    train_x, held_x = standardize(train_x, held_x)
    predict = train_bc_head(train_x, train_y, seed=seed)
    bc_mse = float(((predict(held_x) - held_y) ** 2).mean())

    mu = np.concatenate([feats[i][:-1] for i in train_idx]).mean(axis=0, keepdims=True)
    sd = np.concatenate([feats[i][:-1] for i in train_idx]).std(axis=0, keepdims=True) + 1e-8
    successes = 0
    for i in held_idx:
        clip = robot_clips[i]
        pred = predict((feats[i][:-1] - mu) / sd)
        err = np.linalg.norm(pred - clip.positions[1:], axis=1)
        if err.max() <= tube_radius:
            successes += 1
    return DownstreamReport(
        tag="adapted" if adapted else "frozen",
        probe_accuracy=probe_acc,
        bc_mse=bc_mse,
        success_rate=successes / len(held_idx),
        n_train_clips=len(train_idx),
        n_heldout_clips=len(held_idx),
    )


# ---------------------------------------------------------------------------
# embedding dump


def dump_embeddings(
    checkpoint: ModelCheckpoint,
    clips: list[VideoClip],
    path: str,
    descriptions: dict[int, str] | None = None,
    adapted: bool = True,
    seed: int = 311,
) -> str:
    """CSV of pooled embeddings: clip_id,task_id,domain,adapted,f0..f{C-1}."""
    width = checkpoint.backbone.out_channels
    header = ["clip_id", "task_id", "domain", "adapted"] + [f"f{i}" for i in range(width)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for clip in clips:
            desc = descriptions.get(clip.pair_id) if descriptions else None
            vec = embed_clip(checkpoint, clip, desc, adapted=adapted, seed=seed)
            writer.writerow(
                [f"{clip.pair_id}_{clip.domain}", clip.task_id, clip.domain, int(adapted)]
                + [repr(float(v)) for v in vec]
            )
    return path


def mean_within_task_distance(embeddings: np.ndarray, task_ids: np.ndarray) -> float:
    """Mean pairwise distance between same-task embeddings (compactness)."""
    total, count = 0.0, 0
    for task in np.unique(task_ids):
        rows = embeddings[task_ids == task]
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                total += float(np.linalg.norm(rows[i] - rows[j]))
                count += 1
    return total / count if count else 0.0


def mean_pairwise_distance(embeddings: np.ndarray) -> float:
    total, count = 0.0, 0
    for i in range(len(embeddings)):
        for j in range(i + 1, len(embeddings)):
            total += float(np.linalg.norm(embeddings[i] - embeddings[j]))
            count += 1
    return total / count if count else 0.0


def task_compactness_ratio(embeddings: np.ndarray, task_ids: np.ndarray) -> float:
    """Within-task distance relative to overall spread; lower = tighter
    task clusters. The raw within-task distance alone is meaningless when
    an embedding cloud is globally collapsed, so compactness is judged
    against the cloud's own scale."""
    overall = mean_pairwise_distance(embeddings)
    if overall == 0.0:
        return 1.0
    return mean_within_task_distance(embeddings, task_ids) / overall
