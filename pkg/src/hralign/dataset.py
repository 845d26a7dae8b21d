"""Procedurally generated paired human/robot demonstration clips.

Each pair shares one latent effector trajectory, rendered twice: a "human"
render (round effector, warm palette, textured background) and a "robot"
render (angular effector, cool palette, grid background). The ``gap`` knob
scales how far each render diverges from a common neutral appearance, so
gap=0 makes the two clips of a pair identical elementwise and larger gaps
grow the pixel difference monotonically.

On disk, a dataset is a JSON manifest plus one serialized frame tensor per
clip, so externally produced paired videos can replace the generator by
writing the same layout.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .rng import RngState
from .task_query import TaskDescription
from .tensor import from_bytes, to_bytes

FRAME_H = 16
FRAME_W = 16
FRAME_C = 3
CLIP_LEN_MIN = 8
CLIP_LEN_MAX = 24
MANIFEST_VERSION = 1

_MARGIN = 0.15
_GOLDEN_ANGLE = 2.399963229728653

_VERBS = ("push", "lift", "slide", "stack", "open", "close",
          "pick", "place", "turn", "drop", "sweep", "pull")
_NOUNS = ("block", "cup", "drawer", "ball", "lever", "ring",
          "box", "peg", "plate", "knob", "switch", "tray")
_TEMPLATES = (
    "{verb} the {noun}",
    "{verb} {noun}",
    "slowly {verb} the {noun}",
    "{verb} the small {noun}",
)


class ManifestError(RuntimeError):
    """A dataset manifest or one of its referenced files is unusable."""


@dataclass
class LatentTrajectory:
    """The shared semantics both renders depict: effector path + gripper."""

    positions: np.ndarray  # (T, 2) in the unit square
    gripper: np.ndarray  # (T,) uint8, 1 = closed
    task_id: int

    def __post_init__(self):
        if len(self.positions) < 2:
            raise ValueError("trajectory needs at least two steps")
        if self.positions.min() < 0.0 or self.positions.max() > 1.0:
            raise ValueError("trajectory positions must lie inside the unit square")


@dataclass
class SceneProps:
    """Static per-pair scene objects, shared by both renders of a pair.

    Real paired demonstrations show one workspace from two embodiments, so
    scene identity is a pair-level invariant; these stand in for it.
    """

    centers: np.ndarray  # (K, 2) in the unit square
    radii: np.ndarray  # (K,) in pixels
    colors: np.ndarray  # (K, 3) base colors before domain palette


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, C) float64 in [0, 1]
    domain: str  # "human" | "robot"
    task_id: int
    pair_id: int
    positions: np.ndarray | None = field(default=None, repr=False)
    gripper: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain not in ("human", "robot"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"clip frames must be (T, H, W, C), got {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]


@dataclass
class PairedDemo:
    human: VideoClip
    robot: VideoClip
    description: TaskDescription

    def __post_init__(self):
        if self.human.pair_id != self.robot.pair_id:
            raise ValueError("pair ids disagree between the two clips")
        if self.human.task_id != self.robot.task_id != self.description.task_id:
            raise ValueError("task ids disagree within the pair")
        if self.human.domain != "human" or self.robot.domain != "robot":
            raise ValueError("pair must hold one human and one robot clip")

    @property
    def pair_id(self) -> int:
        return self.human.pair_id

    @property
    def task_id(self) -> int:
        return self.human.task_id


# ---------------------------------------------------------------------------
# task archetypes and trajectories


def task_phrase(task_id: int) -> tuple[str, str]:
    verb = _VERBS[task_id % len(_VERBS)]
    noun = _NOUNS[(task_id + task_id // len(_VERBS)) % len(_NOUNS)]
    return verb, noun


def _task_endpoints(task_id: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Fixed start, goal and path bend per task."""
    angle = (task_id * _GOLDEN_ANGLE) % (2.0 * np.pi)
    radius = 0.30
    center = np.array([0.5, 0.5])
    start = center + radius * np.array([np.cos(angle), np.sin(angle)])
    goal = center - radius * np.array([np.cos(angle + 0.5), np.sin(angle + 0.5)])
    style = task_id % 4  # 0 line, 1 arc one way, 2 arc other way, 3 zigzag
    bend = {0: 0.0, 1: 0.25, 2: -0.25, 3: 0.0}[style]
    return start, goal, bend


def sample_trajectory(task_id: int, rng: RngState) -> LatentTrajectory:
    """One instance of a task: jittered endpoints, bend, pace and grasp
    window make same-task instances clearly distinguishable on a 16x16
    canvas while keeping the task archetype recognizable."""
    start, goal, bend = _task_endpoints(task_id)
    t_len = CLIP_LEN_MIN + rng.randint(CLIP_LEN_MAX - CLIP_LEN_MIN + 1)
    start = start + rng.uniform(2, -0.10, 0.10)
    goal = goal + rng.uniform(2, -0.10, 0.10)
    bend = bend + rng.uniform(None, -0.30, 0.30)
    pace = rng.uniform(None, 0.55, 1.80)  # progress exponent along the path
    zigzag = 0.12 if task_id % 4 == 3 else 0.0
    direction = goal - start
    perp = np.array([-direction[1], direction[0]])
    norm = np.linalg.norm(perp)
    perp = perp / norm if norm > 1e-9 else np.array([0.0, 1.0])
    ts = np.linspace(0.0, 1.0, t_len)[:, None] ** pace
    control = (start + goal) / 2.0 + bend * perp
    pos = (1 - ts) ** 2 * start + 2 * ts * (1 - ts) * control + ts**2 * goal
    if zigzag:
        pos = pos + zigzag * np.sin(3.0 * np.pi * ts) * perp
    pos = np.clip(pos, _MARGIN, 1.0 - _MARGIN)
    grasp_from = rng.uniform(None, 0.20, 0.45)
    grasp_to = rng.uniform(None, 0.55, 0.80)
    frac = np.linspace(0.0, 1.0, t_len)
    gripper = ((frac >= grasp_from) & (frac < grasp_to)).astype(np.uint8)
    return LatentTrajectory(pos, gripper, task_id)


# ---------------------------------------------------------------------------
# rendering


@lru_cache(maxsize=1)
def _grids() -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:FRAME_H, 0:FRAME_W].astype(np.float64)
    return xs, ys


@lru_cache(maxsize=1)
def _warm_background() -> np.ndarray:
    """Soft blotchy texture, red-heavy; the human-domain look at gap=1.

    Kept low-contrast so the moving effector, not the static backdrop,
    dominates pooled features.
    """
    xs, ys = _grids()
    wave = 0.5 + 0.5 * np.sin(xs * 0.8 + 1.3) * np.cos(ys * 0.6 + 0.4)
    bg = np.empty((FRAME_H, FRAME_W, 3))
    bg[..., 0] = 0.50 + 0.14 * wave
    bg[..., 1] = 0.40 + 0.10 * wave
    bg[..., 2] = 0.30 + 0.05 * wave
    return bg


@lru_cache(maxsize=1)
def _cool_background() -> np.ndarray:
    """Dim grid pattern, blue-heavy; the robot-domain look at gap=1."""
    xs, ys = _grids()
    line = ((xs % 4 == 0) | (ys % 4 == 0)).astype(np.float64)
    bg = np.empty((FRAME_H, FRAME_W, 3))
    bg[..., 0] = 0.28 + 0.04 * line
    bg[..., 1] = 0.35 + 0.12 * line
    bg[..., 2] = 0.48 + 0.17 * line
    return bg


_BASE_BG = 0.45
_BASE_COLOR = np.array([0.85, 0.85, 0.85])
_WARM_COLOR = np.array([0.95, 0.55, 0.20])
_COOL_COLOR = np.array([0.20, 0.55, 0.95])
_WARM_TINT = np.array([1.00, 0.75, 0.45])
_COOL_TINT = np.array([0.45, 0.75, 1.00])
_EFFECTOR_RADIUS = 2.1


def _shape_mask(center: np.ndarray, radius: float, domain: str, gap: float) -> np.ndarray:
    """Soft footprint: round in the human render, morphing to square in
    the robot render as the gap grows."""
    xs, ys = _grids()
    px = center[0] * (FRAME_W - 1)
    py = center[1] * (FRAME_H - 1)
    mask_round = np.clip(radius - np.hypot(xs - px, ys - py), 0.0, 1.0)
    if domain == "human":
        return mask_round
    d_square = np.maximum(np.abs(xs - px), np.abs(ys - py))
    mask_square = np.clip(radius - d_square, 0.0, 1.0)
    return (1.0 - gap) * mask_round + gap * mask_square


def _domain_color(base: np.ndarray, domain: str, gap: float) -> np.ndarray:
    tint = _WARM_TINT if domain == "human" else _COOL_TINT
    return (1.0 - gap) * base + gap * (base * tint)


def _paint(frame: np.ndarray, mask: np.ndarray, color: np.ndarray) -> np.ndarray:
    return frame * (1.0 - mask[..., None]) + color * mask[..., None]


def _render_frame(
    pos: np.ndarray, closed: bool, props: SceneProps, domain: str, gap: float
) -> np.ndarray:
    if domain == "human":
        bg = (1.0 - gap) * _BASE_BG + gap * _warm_background()
        effector_color = (1.0 - gap) * _BASE_COLOR + gap * _WARM_COLOR
    else:
        bg = (1.0 - gap) * _BASE_BG + gap * _cool_background()
        effector_color = (1.0 - gap) * _BASE_COLOR + gap * _COOL_COLOR
    frame = np.broadcast_to(bg, (FRAME_H, FRAME_W, 3)).astype(np.float64).copy()
    for k in range(len(props.centers)):
        mask = _shape_mask(props.centers[k], float(props.radii[k]), domain, gap)
        frame = _paint(frame, mask, _domain_color(props.colors[k], domain, gap))
    brightness = 0.72 if closed else 1.0
    mask = _shape_mask(pos, _EFFECTOR_RADIUS, domain, gap)
    return _paint(frame, mask, effector_color * brightness)


def sample_props(rng: RngState) -> SceneProps:
    # kept smaller and dimmer than the effector so scene identity aids
    # pair matching without drowning the motion signal
    n = 2 + rng.randint(2)
    centers = rng.uniform((n, 2), 0.12, 0.88)
    radii = rng.uniform((n,), 0.9, 1.7)
    colors = rng.uniform((n, 3), 0.30, 0.70)
    return SceneProps(centers, radii, colors)


def render_clip(
    traj: LatentTrajectory, props: SceneProps, domain: str, gap: float, pair_id: int
) -> VideoClip:
    frames = np.stack(
        [
            _render_frame(traj.positions[t], bool(traj.gripper[t]), props, domain, gap)
            for t in range(len(traj.positions))
        ]
    )
    return VideoClip(
        frames=frames,
        domain=domain,
        task_id=traj.task_id,
        pair_id=pair_id,
        positions=traj.positions.copy(),
        gripper=traj.gripper.copy(),
    )


def generate_paired_set(
    rng: RngState, n_tasks: int, pairs_per_task: int, gap: float
) -> list[PairedDemo]:
    """Deterministic paired dataset: same rng state, same bytes out."""
    if n_tasks < 2:
        raise ValueError(f"need at least 2 tasks, got {n_tasks}")
    if pairs_per_task < 1:
        raise ValueError(f"need at least 1 pair per task, got {pairs_per_task}")
    if not 0.0 <= gap <= 1.0:
        raise ValueError(f"gap must lie in [0, 1], got {gap}")
    pairs: list[PairedDemo] = []
    pair_id = 0
    for task_id in range(n_tasks):
        verb, noun = task_phrase(task_id)
        for _ in range(pairs_per_task):
            traj = sample_trajectory(task_id, rng)
            props = sample_props(rng)
            template = _TEMPLATES[rng.randint(len(_TEMPLATES))]
            text = template.format(verb=verb, noun=noun)
            human = render_clip(traj, props, "human", gap, pair_id)
            robot = render_clip(traj, props, "robot", gap, pair_id)
            pairs.append(PairedDemo(human, robot, TaskDescription(text, task_id)))
            pair_id += 1
    return pairs


# ---------------------------------------------------------------------------
# frame sampling


def sample_frame_indices(t_len: int, t: int, rng: RngState) -> list[int]:
    """T ascending indices: without replacement when the clip is long
    enough, with replacement otherwise."""
    if t < 1:
        raise ValueError(f"frame count must be >= 1, got {t}")
    if t_len >= t:
        idx = sorted(int(i) for i in rng.permutation(t_len)[:t])
    else:
        idx = sorted(rng.randint(t_len) for _ in range(t))
    return idx


def sample_frames(clip: VideoClip, t: int, rng: RngState) -> np.ndarray:
    """Randomly sampled frames in temporal order, shape (t, H, W, C)."""
    idx = sample_frame_indices(clip.length, t, rng)
    return clip.frames[idx].copy()


# ---------------------------------------------------------------------------
# splits


def split_pairs(
    pairs: list[PairedDemo], heldout_frac: float = 0.25
) -> tuple[list[PairedDemo], list[PairedDemo]]:
    """Per-task split: the trailing fraction of each task's pairs is held out."""
    by_task: dict[int, list[PairedDemo]] = {}
    for pair in pairs:
        by_task.setdefault(pair.task_id, []).append(pair)
    train, heldout = [], []
    for task_id in sorted(by_task):
        group = sorted(by_task[task_id], key=lambda p: p.pair_id)
        n_held = int(round(heldout_frac * len(group)))
        n_held = min(max(n_held, 0), len(group) - 1)
        cut = len(group) - n_held
        train.extend(group[:cut])
        heldout.extend(group[cut:])
    return train, heldout


# ---------------------------------------------------------------------------
# manifest I/O


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_manifest(pairs: list[PairedDemo], path: str) -> None:
    """Write manifest JSON plus one serialized clip file per video.

    Clip files live under ``clips/`` next to the manifest; all paths in the
    manifest are relative to it. Writes are atomic (temp file + rename).
    """
    root = os.path.dirname(os.path.abspath(path))
    clips_dir = os.path.join(root, "clips")
    os.makedirs(clips_dir, exist_ok=True)
    entries = []
    for pair in pairs:
        human_rel = f"clips/p{pair.pair_id:04d}_h.bin"
        robot_rel = f"clips/p{pair.pair_id:04d}_r.bin"
        human_bytes = to_bytes(pair.human.frames)
        robot_bytes = to_bytes(pair.robot.frames)
        _atomic_write(os.path.join(root, human_rel), human_bytes)
        _atomic_write(os.path.join(root, robot_rel), robot_bytes)
        entry = {
            "pair_id": pair.pair_id,
            "task_id": pair.task_id,
            "description": pair.description.text,
            "human_file": human_rel,
            "robot_file": robot_rel,
            "human_len": pair.human.length,
            "robot_len": pair.robot.length,
            "human_sha256": _sha256(human_bytes),
            "robot_sha256": _sha256(robot_bytes),
        }
        if pair.human.positions is not None:
            entry["latent"] = {
                "positions": [[float(x), float(y)] for x, y in pair.human.positions],
                "gripper": [int(g) for g in pair.human.gripper],
            }
        entries.append(entry)
    doc = {
        "version": MANIFEST_VERSION,
        "frame_shape": [FRAME_H, FRAME_W, FRAME_C],
        "pairs": entries,
    }
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True).encode("utf-8"))


def load_manifest(path: str) -> list[PairedDemo]:
    """Load a manifest; errors name the offending entry or file."""
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode("utf-8"))
    except FileNotFoundError as e:
        raise ManifestError(f"manifest not found: {path}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ManifestError(f"manifest is not valid JSON: {path}: {e}") from e
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {doc.get('version')!r} in {path}")
    frame_shape = tuple(doc.get("frame_shape", ()))
    if len(frame_shape) != 3:
        raise ManifestError(f"manifest frame_shape malformed in {path}")
    root = os.path.dirname(os.path.abspath(path))
    pairs: list[PairedDemo] = []
    for entry in doc.get("pairs", []):
        pid = entry.get("pair_id")
        clips = {}
        for side, domain in (("human", "human"), ("robot", "robot")):
            rel = entry[f"{side}_file"]
            file_path = os.path.join(root, rel)
            try:
                with open(file_path, "rb") as fh:
                    blob = fh.read()
            except FileNotFoundError as e:
                raise ManifestError(f"pair {pid}: missing clip file {file_path}") from e
            digest = _sha256(blob)
            if digest != entry[f"{side}_sha256"]:
                raise ManifestError(
                    f"pair {pid}: checksum mismatch for {rel} "
                    f"(expected {entry[f'{side}_sha256']}, got {digest})"
                )
            frames, _ = from_bytes(blob)
            expected = (entry[f"{side}_len"],) + frame_shape
            if frames.shape != expected:
                raise ManifestError(
                    f"pair {pid}: clip {rel} has shape {frames.shape}, manifest says {expected}"
                )
            clips[side] = frames
        latent = entry.get("latent")
        positions = gripper = None
        if latent is not None:
            positions = np.asarray(latent["positions"], dtype=np.float64)
            gripper = np.asarray(latent["gripper"], dtype=np.uint8)
        human = VideoClip(clips["human"], "human", entry["task_id"], pid, positions, gripper)
        robot = VideoClip(
            clips["robot"],
            "robot",
            entry["task_id"],
            pid,
            None if positions is None else positions.copy(),
            None if gripper is None else gripper.copy(),
        )
        pairs.append(PairedDemo(human, robot, TaskDescription(entry["description"], entry["task_id"])))
    return pairs
