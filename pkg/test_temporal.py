import numpy as np
import pytest
import torch
from torch import nn

from maggie.errors import InputValidationError
from maggie.temporal import (
    BiConvGRU,
    DeltaNet,
    aggregate_sequence,
    delta_ground_truth,
    fuse_mattes,
    predict_delta,
    temporal_aggregate,
)


@pytest.fixture
def gru():
    return BiConvGRU(4)


def test_zero_input_single_frame_closed_form(gru):
    for cell in (gru.forward_cell, gru.backward_cell):
        nn.init.normal_(cell.gates.bias)
        nn.init.normal_(cell.candidate.bias)
    out, _ = temporal_aggregate(torch.zeros(1, 4, 3, 3), None, gru)

    def state(cell):
        z = torch.sigmoid(cell.gates.bias[:4])
        return (z * torch.tanh(cell.candidate.bias)).reshape(4, 1, 1)

    expected = 0.5 * (state(gru.forward_cell) + state(gru.backward_cell))
    assert torch.allclose(out[0], expected.expand(4, 3, 3), atol=1e-6)


def test_shared_weights_make_aggregation_time_symmetric(gru):
    gru.backward_cell.load_state_dict(gru.forward_cell.state_dict())
    x = torch.randn(4, 4, 3, 3)
    out, _ = temporal_aggregate(x, None, gru)
    rev, _ = temporal_aggregate(x.flip(0), None, gru)
    assert torch.allclose(rev, out.flip(0), atol=1e-6)


def test_carried_state_continues_the_forward_pass(gru):
    x = torch.randn(5, 4, 3, 3)
    full, _ = temporal_aggregate(x, None, gru, mode="forward")
    first, carry = temporal_aggregate(x[0:3], None, gru, mode="forward", overlap=1)
    second, _ = temporal_aggregate(x[2:5], carry, gru, mode="forward")
    assert torch.allclose(first, full[0:3], atol=1e-6)
    assert torch.allclose(second, full[2:5], atol=1e-6)


def test_sliding_windows_reproduce_a_single_forward_pass(gru):
    x = torch.randn(5, 4, 3, 3)
    full, _ = temporal_aggregate(x, None, gru, mode="forward")
    windowed = aggregate_sequence(x, gru, window=3, overlap=2, mode="forward")
    assert torch.allclose(windowed, full, atol=1e-6)


def test_bidirectional_windows_cover_every_frame(gru):
    x = torch.randn(6, 4, 3, 3)
    out = aggregate_sequence(x, gru, window=3, overlap=1)
    assert out.shape == x.shape
    short = aggregate_sequence(x[:2], gru, window=3, overlap=2)
    assert torch.allclose(short, temporal_aggregate(x[:2], None, gru)[0])


def test_zero_parameters_keep_identical_frames_identical(gru):
    for p in gru.parameters():
        nn.init.zeros_(p)
    frame = torch.randn(4, 3, 3)
    out, _ = temporal_aggregate(frame.expand(3, 4, 3, 3).contiguous(), None, gru)
    assert torch.equal(out[0], out[1]) and torch.equal(out[1], out[2])


def test_mode_none_passes_features_through(gru):
    x = torch.randn(3, 4, 3, 3)
    out, carry = temporal_aggregate(x, None, gru, mode="none")
    assert out is x
    assert torch.count_nonzero(carry) == 0
    assert aggregate_sequence(x, gru, mode="none") is x


def test_unknown_mode_is_rejected(gru):
    with pytest.raises(InputValidationError):
        temporal_aggregate(torch.randn(2, 4, 3, 3), None, gru, mode="sideways")


# ---------------------------------------------------------------- change maps


def test_delta_net_probabilities():
    net = DeltaNet(8, hidden=4).eval()
    prob = net(torch.randn(3, 8, 2, 2), (16, 16))
    assert prob.shape == (2, 1, 16, 16)
    assert torch.all(prob > 0) and torch.all(prob < 1)
    with pytest.raises(InputValidationError):
        net(torch.randn(1, 8, 2, 2), (16, 16))


def test_predict_delta_thresholds_the_probability():
    net = DeltaNet(8, hidden=4).eval()
    prev, cur = torch.randn(8, 2, 2), torch.randn(8, 2, 2)
    prob, binary = predict_delta(prev, cur, net, (16, 16))
    assert prob.shape == binary.shape == (16, 16)
    assert torch.equal(binary.bool(), prob > 0.5)
    with pytest.raises(InputValidationError):
        predict_delta(prev, torch.randn(8, 4, 4), net, (16, 16))


def test_delta_ground_truth_examples():
    static = torch.rand(1, 2, 4, 4).expand(3, 2, 4, 4)
    assert torch.count_nonzero(delta_ground_truth(static)) == 0

    gt = torch.full((2, 2, 4, 4), 0.5)
    gt[1] += 0.0005
    assert torch.count_nonzero(delta_ground_truth(gt)) == 0

    gt = torch.full((2, 2, 4, 4), 0.5)
    gt[1, 1, 2, 3] = 0.6
    d = delta_ground_truth(gt)
    assert d.shape == (1, 1, 4, 4)
    assert d.sum() == 1 and d[0, 0, 2, 3] == 1


def test_delta_ground_truth_is_time_symmetric():
    gt = torch.rand(4, 2, 4, 4)
    assert torch.equal(delta_ground_truth(gt.flip(0)), delta_ground_truth(gt).flip(0))


def test_delta_ground_truth_needs_two_frames():
    with pytest.raises(InputValidationError):
        delta_ground_truth(torch.rand(1, 2, 4, 4))


# ---------------------------------------------------------------- fusion


def _fusion_oracle(a: np.ndarray, d: np.ndarray) -> np.ndarray:
    t_len = a.shape[0]
    fwd, bwd = a.copy(), a.copy()
    for t in range(1, t_len):
        fwd[t] = np.where(d[t - 1], a[t], fwd[t - 1])
    for t in range(t_len - 2, -1, -1):
        bwd[t] = np.where(d[t], a[t], bwd[t + 1])
    return np.where(fwd != bwd, a, fwd)


def test_fusion_matches_recursion():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t_len = int(rng.integers(2, 6))
        a = rng.choice([0.0, 0.25, 0.5, 1.0], size=(t_len, 2, 4, 4))
        d = rng.random((t_len - 1, 4, 4)) < 0.5
        got = fuse_mattes(torch.from_numpy(a), torch.from_numpy(d).unsqueeze(1).double())
        np.testing.assert_array_equal(got.numpy(), _fusion_oracle(a, d))


def test_everything_changing_keeps_per_frame_mattes():
    a = torch.rand(4, 2, 4, 4)
    assert torch.equal(fuse_mattes(a, torch.ones(3, 1, 4, 4)), a)


def test_nothing_changing_propagates_end_frames():
    a = torch.rand(4, 2, 4, 4)
    a[-1, 0] = a[0, 0]
    out = fuse_mattes(a, torch.zeros(3, 4, 4))
    assert torch.equal(out[:, 0], a[0, 0].expand(4, 4, 4))
    # instance 1 differs between the end frames, so every frame keeps its own value
    assert torch.equal(out[:, 1], a[:, 1])


def test_fused_values_come_from_the_same_pixel_and_instance():
    a = torch.rand(5, 3, 4, 4)
    d = (torch.rand(4, 4, 4) < 0.3).float()
    out = fuse_mattes(a, d)
    for t in range(5):
        assert torch.all((out[t].unsqueeze(0) == a).any(dim=0))


def test_forward_mode_and_passthrough():
    a = torch.rand(3, 1, 2, 2)
    out = fuse_mattes(a, torch.zeros(2, 2, 2), mode="forward")
    assert torch.equal(out, a[0:1].expand(3, 1, 2, 2))
    assert fuse_mattes(a, torch.zeros(2, 2, 2), mode="none") is a
    single = torch.rand(1, 1, 2, 2)
    assert fuse_mattes(single, torch.zeros(0, 2, 2)) is single


def test_fusion_rejects_wrong_delta_shape():
    with pytest.raises(InputValidationError):
        fuse_mattes(torch.rand(3, 1, 4, 4), torch.zeros(3, 4, 4))
