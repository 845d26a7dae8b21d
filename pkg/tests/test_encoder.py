import numpy as np
import pytest

from helpers import random_clip_frames
from hralign.dataset import generate_paired_set
from hralign.encoder import Backbone, FeatureMap, encode_frozen, pretext_pretrain
from hralign.rng import RngState
from hralign.tensor import ShapeError, Tensor


def frozen_backbone(seed=3):
    return Backbone.create(RngState(seed)).freeze()


def test_zero_frames_zero_features():
    bb = frozen_backbone()
    fm = encode_frozen(bb, np.zeros((2, 16, 16, 3)))
    assert np.array_equal(fm.values.data, np.zeros_like(fm.values.data))


def test_reference_shape_law():
    bb = frozen_backbone()
    fm = encode_frozen(bb, random_clip_frames(RngState(1), t=5))
    assert fm.values.shape == (5, 4, 4, 32)


def test_single_frame_shape_contract():
    bb = frozen_backbone()
    fm = encode_frozen(bb, random_clip_frames(RngState(2), t=1))
    h, w = bb.output_hw(16, 16)
    assert fm.values.shape == (1, h, w, bb.out_channels)


def test_per_frame_determinism():
    bb = frozen_backbone()
    frames = random_clip_frames(RngState(4), t=5)
    frames[3] = frames[0]
    fm = encode_frozen(bb, frames)
    assert np.array_equal(fm.values.data[0], fm.values.data[3])


def test_frame_permutation_permutes_time_slices():
    bb = frozen_backbone()
    frames = random_clip_frames(RngState(5), t=4)
    perm = [2, 0, 3, 1]
    fm = encode_frozen(bb, frames)
    fm_perm = encode_frozen(bb, frames[perm])
    assert np.array_equal(fm_perm.values.data, fm.values.data[perm])


def test_wrong_channel_count_rejected():
    bb = frozen_backbone()
    with pytest.raises(ShapeError):
        encode_frozen(bb, np.zeros((2, 16, 16, 4)))


def test_out_of_range_frames_rejected():
    bb = frozen_backbone()
    with pytest.raises(ValueError):
        encode_frozen(bb, np.full((1, 16, 16, 3), 1.5))


def test_unfrozen_backbone_rejected():
    bb = Backbone.create(RngState(3))
    with pytest.raises(ValueError):
        encode_frozen(bb, np.zeros((1, 16, 16, 3)))


def test_featuremap_rejects_nonfinite():
    with pytest.raises(Exception):
        FeatureMap(Tensor(np.full((1, 2, 2, 3), np.nan)))


def test_encode_frozen_retains_no_gradients():
    bb = frozen_backbone()
    fm = encode_frozen(bb, random_clip_frames(RngState(6), t=2))
    assert not fm.values.requires_grad
    for p in bb.named_parameters().values():
        assert p.grad is None


# pretext --------------------------------------------------------------------


def human_clips(n=24, seed=9):
    pairs = generate_paired_set(RngState(seed), 3, n // 3, 0.5)
    return [p.human for p in pairs]


def test_pretext_zero_epochs_identity():
    clips = human_clips()
    rng = RngState(17)
    init = Backbone.create(rng.clone())
    backbone, history = pretext_pretrain(rng, clips, epochs=0)
    assert backbone.frozen
    assert history == []
    for (_, a), (_, b) in zip(
        sorted(init.named_parameters().items()), sorted(backbone.named_parameters().items())
    ):
        assert np.array_equal(a.data, b.data)


def test_pretext_rejects_empty():
    with pytest.raises(ValueError):
        pretext_pretrain(RngState(1), [], epochs=1)


def test_pretext_rejects_robot_clips():
    pairs = generate_paired_set(RngState(3), 2, 2, 0.5)
    with pytest.raises(ValueError):
        pretext_pretrain(RngState(1), [p.robot for p in pairs], epochs=1)


def test_pretext_deterministic():
    clips = human_clips()
    b1, h1 = pretext_pretrain(RngState(21), clips, epochs=2)
    b2, h2 = pretext_pretrain(RngState(21), clips, epochs=2)
    assert h1 == h2
    for (_, a), (_, b) in zip(
        sorted(b1.named_parameters().items()), sorted(b2.named_parameters().items())
    ):
        assert np.array_equal(a.data, b.data)


def test_pretext_reference_loss_improves(reference_backbone):
    history = reference_backbone.pretext_history
    assert len(history) == 20
    assert history[-1] < history[0]


def test_frozen_flag_blocks_grad_flags():
    bb = frozen_backbone()
    for p in bb.named_parameters().values():
        assert not p.requires_grad
