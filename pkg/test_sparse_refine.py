import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch import nn

from maggie.decoder import CoarseMatteBundle
from maggie.encoder import FeaturePyramid
from maggie.errors import InputValidationError
from maggie.sparse_conv import (
    SparseFeatureMap,
    SparseInverseConv2d,
    SubmanifoldConv2d,
    neighbor_map,
)
from maggie.sparse_refine import (
    DetailAggregation,
    InstanceGuidance,
    PointwiseMLP,
    SparseMatteHead,
    SparseRefiner,
    dense_to_sparse,
    extract_uncertainty,
    progressive_refine,
    refine_steps,
)

from conftest import TINY_CHANNELS


def random_sparse(shape, channels, density=0.4, seed=0, scale=8):
    g = torch.Generator().manual_seed(seed)
    coords = torch.nonzero(torch.rand(shape, generator=g) < density)
    values = torch.randn(len(coords), channels, generator=g)
    return SparseFeatureMap(coords=coords, values=values, scale=scale, shape=shape)


def read_at(dense, coords):
    # dense (T, N, C, h, w) -> (P, C)
    return dense[coords[:, 0], coords[:, 1], :, coords[:, 2], coords[:, 3]]


def planes(x: SparseFeatureMap) -> torch.Tensor:
    t, n, h, w = x.shape
    return x.to_dense().reshape(t * n, x.channels, h, w)


# ---------------------------------------------------------------- sparse convolutions


@pytest.mark.parametrize("kernel", [1, 3, 5])
def test_submanifold_conv_matches_dense_conv(kernel):
    x = random_sparse((2, 2, 6, 7), 3, seed=kernel)
    conv = SubmanifoldConv2d(3, 4, kernel)
    nn.init.normal_(conv.bias)
    out = conv(x)
    t, n, h, w = x.shape
    ref = F.conv2d(planes(x), conv.dense_weight(), conv.bias, padding=kernel // 2).reshape(t, n, 4, h, w)
    assert torch.equal(out.coords, x.coords)
    assert torch.allclose(out.values, read_at(ref, x.coords), atol=1e-5)


def test_neighbor_map_flags_inactive_neighbours():
    coords = torch.tensor([[0, 0, 1, 1], [0, 0, 1, 2]])
    nbr = neighbor_map(coords, (1, 1, 3, 3), 3)
    assert nbr.shape == (2, 9)
    # centre column holds the entry itself, (0, +1) its right neighbour
    assert nbr[0, 4] == 0 and nbr[0, 5] == 1
    assert nbr[1, 3] == 0 and nbr[1, 5] == -1
    assert (nbr[0] >= 0).sum() == 2


def test_inverse_conv_matches_transposed_dense_conv():
    x = random_sparse((1, 3, 4, 5), 3, seed=11)
    up = SparseInverseConv2d(3, 4)
    nn.init.normal_(up.bias)
    out = up(x)
    t, n, h, w = x.shape
    ref = F.conv_transpose2d(planes(x), up.dense_weight(), up.bias, stride=2).reshape(t, n, 4, 2 * h, 2 * w)
    assert out.scale == 4
    assert out.shape == (t, n, 2 * h, 2 * w)
    assert len(out) == 4 * len(x)
    assert torch.allclose(out.values, read_at(ref, out.coords), atol=1e-5)


def test_inverse_conv_writes_exactly_the_four_children():
    x = SparseFeatureMap(torch.tensor([[0, 0, 0, 0]]), torch.randn(1, 2), 8, (1, 1, 3, 3))
    out = SparseInverseConv2d(2, 2)(x)
    got = {tuple(c[2:].tolist()) for c in out.coords}
    assert got == {(0, 0), (0, 1), (1, 0), (1, 1)}


def test_inverse_conv_below_scale_one_is_rejected():
    x = random_sparse((1, 1, 4, 4), 2, scale=1)
    with pytest.raises(InputValidationError):
        SparseInverseConv2d(2, 2)(x)


def test_empty_maps_stay_empty():
    empty = SparseFeatureMap(torch.zeros(0, 4, dtype=torch.long), torch.zeros(0, 3), 8, (1, 1, 4, 4))
    assert len(SubmanifoldConv2d(3, 5)(empty)) == 0
    up = SparseInverseConv2d(3, 5)(empty)
    assert len(up) == 0 and up.channels == 5


# ---------------------------------------------------------------- uncertainty and dense-to-sparse


def test_binary_matte_has_no_uncertain_cells():
    a8 = (torch.rand(1, 2, 4, 4) > 0.5).float()
    assert len(extract_uncertainty(a8)) == 0


def test_half_matte_is_fully_uncertain():
    u = extract_uncertainty(torch.full((1, 1, 4, 4), 0.5))
    assert len(u) == 16
    assert torch.all(u.to_mask())


def test_uncertainty_matches_brute_force():
    g = torch.Generator().manual_seed(5)
    a8 = torch.rand(2, 3, 5, 5, generator=g)
    a8[a8 < 0.2] = 0.0
    a8[a8 > 0.8] = 1.0
    eps = 1.0 / 255.0
    u = extract_uncertainty(a8, eps)
    expected = {
        (t, i, y, x)
        for t in range(2) for i in range(3) for y in range(5) for x in range(5)
        if eps <= a8[t, i, y, x] <= 1 - eps
    }
    assert {tuple(c.tolist()) for c in u.coords} == expected


def test_dense_to_sparse_with_identity_mlp():
    enriched = torch.randn(1, 4, 3, 3)
    u = extract_uncertainty(torch.full((1, 2, 3, 3), 0.5))
    ones = dense_to_sparse(enriched, torch.ones(1, 2, 4), u, nn.Identity())
    c = u.coords
    assert torch.allclose(ones.values, enriched[c[:, 0], :, c[:, 2], c[:, 3]])
    zeros = dense_to_sparse(enriched, torch.zeros(1, 2, 4), u, nn.Identity())
    assert torch.count_nonzero(zeros.values) == 0


def test_dense_to_sparse_rejects_out_of_range_coordinates():
    u = extract_uncertainty(torch.full((1, 2, 3, 3), 0.5))
    u.coords = u.coords.clone()
    u.coords[0, 2] = 7
    with pytest.raises(InputValidationError):
        dense_to_sparse(torch.randn(1, 4, 3, 3), torch.ones(1, 2, 4), u, nn.Identity())


# ---------------------------------------------------------------- guidance, aggregation, heads


def test_saturated_gate_passes_fine_features():
    x8 = random_sparse((1, 2, 3, 3), 16, seed=2)
    f4 = torch.randn(1, 8, 6, 6)
    ig = InstanceGuidance(16, 8)
    nn.init.zeros_(ig.gate2.weight)
    nn.init.constant_(ig.gate2.bias, 50.0)
    out = ig(x8, f4)
    c = out.coords
    assert out.scale == 4
    assert torch.allclose(out.values, f4[c[:, 0], :, c[:, 2], c[:, 3]], atol=1e-6)

    nn.init.constant_(ig.gate2.bias, -50.0)
    assert torch.allclose(ig(x8, f4).values, torch.zeros_like(out.values), atol=1e-6)


def _random_shape(g: torch.Generator, max_side: int):
    t = int(torch.randint(1, 3, (1,), generator=g))
    n = int(torch.randint(1, 4, (1,), generator=g))
    h, w = (int(v) for v in torch.randint(1, max_side + 1, (2,), generator=g))
    return t, n, h, w


def _random_active(shape, channels, g: torch.Generator, scale: int) -> SparseFeatureMap:
    density = float(torch.rand(1, generator=g)) * 0.8 + 0.1
    active = torch.rand(shape, generator=g) < density
    active.view(-1)[0] = True
    coords = torch.nonzero(active)
    values = torch.randn(len(coords), channels, generator=g)
    return SparseFeatureMap(coords=coords, values=values, scale=scale, shape=shape)


def _guidance_oracle(ig: InstanceGuidance, x8: SparseFeatureMap, f4: torch.Tensor) -> torch.Tensor:
    x4 = ig.up(x8)
    t, n, h, w = x4.shape
    k = ig.kernel // 2
    active = x4.active_mask().reshape(t * n, 1, h, w).float()
    f = f4.repeat_interleave(n, dim=0)
    g = F.conv2d(torch.cat([planes(x4), f * active], dim=1), ig.gate1.dense_weight(), ig.gate1.bias, padding=k)
    g = F.leaky_relu(g, 0.2) * active
    g = F.conv2d(g, ig.gate2.dense_weight(), ig.gate2.bias, padding=k)
    return (torch.sigmoid(g) * f).reshape(t, n, -1, h, w)


def _aggregation_oracle(agg: DetailAggregation, x: SparseFeatureMap, f_dense: torch.Tensor) -> torch.Tensor:
    fine = agg.up(x)
    t, n, h, w = fine.shape
    active = fine.active_mask().reshape(t * n, 1, h, w).float()
    inp = torch.cat([planes(fine), f_dense.repeat_interleave(n, dim=0) * active], dim=1)
    ref = F.conv2d(inp, agg.conv.dense_weight(), agg.conv.bias, padding=agg.kernel // 2)
    return F.leaky_relu(ref, 0.2).reshape(t, n, -1, h, w)


def _head_oracle(head: SparseMatteHead, x: SparseFeatureMap) -> torch.Tensor:
    t, n, h, w = x.shape
    k = head.kernel // 2
    active = x.active_mask().reshape(t * n, 1, h, w).float()
    z = F.conv2d(planes(x), head.conv1.dense_weight(), head.conv1.bias, padding=k)
    z = F.layer_norm(z.permute(0, 2, 3, 1), z.shape[1:2], head.norm.weight, head.norm.bias, head.norm.eps)
    z = F.leaky_relu(z.permute(0, 3, 1, 2), 0.2) * active
    z = F.conv2d(z, head.conv2.dense_weight(), head.conv2.bias, padding=k)
    return (torch.sigmoid(z) * active).reshape(t, n, h, w)


def test_dense_to_sparse_matches_dense_oracle():
    g = torch.Generator().manual_seed(21)
    for _ in range(100):
        t, n, h, w = _random_shape(g, 16)
        c = int(torch.randint(2, 9, (1,), generator=g))
        enriched = torch.randn(t, c, h, w, generator=g)
        tokens = torch.randn(t, n, c, generator=g)
        a8 = torch.rand(t, n, h, w, generator=g)
        a8[a8 < 0.3] = 0.0
        u = extract_uncertainty(a8)
        mlp = PointwiseMLP(c)
        out = dense_to_sparse(enriched, tokens, u, mlp)

        dense = mlp(enriched.permute(0, 2, 3, 1)[:, None] * tokens[:, :, None, None, :])  # (T, N, h, w, C)
        k = u.coords
        assert out.shape == (t, n, h, w)
        torch.testing.assert_close(out.values, dense[k[:, 0], k[:, 1], k[:, 2], k[:, 3]], atol=1e-5, rtol=0)


def test_instance_guidance_matches_dense_oracle():
    g = torch.Generator().manual_seed(22)
    for _ in range(100):
        shape = _random_shape(g, 8)
        c8, c4 = (int(v) for v in torch.randint(2, 9, (2,), generator=g))
        x8 = _random_active(shape, c8, g, scale=8)
        f4 = torch.randn(shape[0], c4, 2 * shape[2], 2 * shape[3], generator=g)
        ig = InstanceGuidance(c8, c4)
        for conv in (ig.up, ig.gate1, ig.gate2):
            nn.init.normal_(conv.bias)
        out = ig(x8, f4)
        assert out.scale == 4
        torch.testing.assert_close(out.values, read_at(_guidance_oracle(ig, x8, f4), out.coords), atol=1e-5, rtol=0)


def test_detail_aggregation_matches_dense_oracle():
    g = torch.Generator().manual_seed(23)
    for _ in range(100):
        shape = _random_shape(g, 8)
        c_in, c_dense, c_out = (int(v) for v in torch.randint(2, 9, (3,), generator=g))
        x = _random_active(shape, c_in, g, scale=4)
        f2 = torch.randn(shape[0], c_dense, 2 * shape[2], 2 * shape[3], generator=g)
        agg = DetailAggregation(c_in, c_dense, c_out)
        nn.init.normal_(agg.up.bias)
        nn.init.normal_(agg.conv.bias)
        out = agg(x, f2)
        assert out.scale == 2
        torch.testing.assert_close(out.values, read_at(_aggregation_oracle(agg, x, f2), out.coords), atol=1e-5, rtol=0)


def test_detail_aggregation_rejects_wrong_dense_scale():
    x = random_sparse((1, 1, 4, 4), 8, scale=4)
    with pytest.raises(InputValidationError):
        DetailAggregation(8, 5, 6)(x, torch.randn(1, 5, 4, 4))


def test_matte_head_matches_dense_oracle():
    g = torch.Generator().manual_seed(24)
    for _ in range(100):
        shape = _random_shape(g, 16)
        c = int(torch.randint(2, 9, (1,), generator=g))
        x = _random_active(shape, c, g, scale=1)
        head = SparseMatteHead(c)
        nn.init.normal_(head.conv1.bias)
        nn.init.normal_(head.conv2.bias)
        nn.init.normal_(head.norm.weight)
        nn.init.normal_(head.norm.bias)
        torch.testing.assert_close(head(x), _head_oracle(head, x), atol=1e-5, rtol=0)


def test_matte_head_support_and_range():
    x = random_sparse((2, 2, 5, 5), 8, density=0.3, seed=9, scale=1)
    a = SparseMatteHead(8)(x)
    assert a.shape == (2, 2, 5, 5)
    assert torch.equal(a > 0, x.active_mask())
    assert torch.all(a < 1)


def test_matte_head_on_empty_map_is_zero():
    empty = SparseFeatureMap(torch.zeros(0, 4, dtype=torch.long), torch.zeros(0, 8), 1, (1, 2, 4, 4))
    assert torch.equal(SparseMatteHead(8)(empty), torch.zeros(1, 2, 4, 4))


def test_refiner_only_writes_inside_uncertain_cells():
    c1, c2, c4, c8 = TINY_CHANNELS
    a8 = torch.full((1, 2, 2, 2), 0.5)
    a8[0, 0, 0, 0] = 0.0
    coarse = CoarseMatteBundle(
        a8=a8,
        logits=torch.zeros_like(a8),
        enriched=torch.randn(1, c8, 2, 2),
        tokens=torch.randn(1, 2, c8),
        aff=torch.full((1, 2, 4), 0.25),
    )
    pyramid = FeaturePyramid({
        1: torch.randn(1, c1, 16, 16),
        2: torch.randn(1, c2, 8, 8),
        4: torch.randn(1, c4, 4, 4),
        8: torch.randn(1, c8, 2, 2),
    })
    out = SparseRefiner(TINY_CHANNELS)(coarse, pyramid, 1.0 / 255.0)
    assert out.a4.shape == (1, 2, 8, 8)
    assert out.a1.shape == (1, 2, 16, 16)
    assert len(out.uncertainty) == 7
    assert torch.count_nonzero(out.a1[0, 0, :8, :8]) == 0
    assert torch.count_nonzero(out.a4[0, 0, :4, :4]) == 0
    assert out.sparsity[8] == pytest.approx(7 / 8)
    assert set(out.sparsity) == {8, 4, 2, 1}


# ---------------------------------------------------------------- progressive refinement


def _dilate(mask: np.ndarray, k: int) -> np.ndarray:
    lo, hi = k // 2, k - 1 - k // 2
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = mask[max(0, y - lo):y + hi + 1, max(0, x - lo):x + hi + 1].any()
    return out


def _prm_oracle(a8, a4, a1, u, kernels, eps):
    final = a8.copy()
    for t in range(a8.shape[0]):
        for i in range(a8.shape[1]):
            a = a8[t, i].copy()
            r4 = _dilate((a >= eps) & (a <= 1 - eps), kernels[0]) & u[t, i]
            a = np.where(r4, a4[t, i], a)
            r1 = _dilate((a >= eps) & (a <= 1 - eps), kernels[1]) & u[t, i]
            final[t, i] = np.where(r1, a1[t, i], a)
    return final


def _random_matte(rng, shape):
    a = rng.uniform(0.0, 1.0, size=shape)
    pick = rng.integers(0, 3, size=shape)
    return np.where(pick == 0, 0.0, np.where(pick == 1, 1.0, a))


def test_progressive_refinement_matches_literal_procedure():
    rng = np.random.default_rng(0)
    eps = 1.0 / 255.0
    for _ in range(200):
        shape = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        a8, a4, a1 = (_random_matte(rng, shape) for _ in range(3))
        u = rng.random(shape) < 0.6
        got = progressive_refine(*(torch.from_numpy(v) for v in (a8, a4, a1, u)), (3, 3), eps)
        np.testing.assert_allclose(got.numpy(), _prm_oracle(a8, a4, a1, u, (3, 3), eps), rtol=0, atol=1e-7)


def test_shrinking_uncertainty_keeps_unrefined_locations():
    rng = np.random.default_rng(1)
    for _ in range(50):
        shape = (1, 2, 12, 12)
        a8, a4, a1 = (torch.from_numpy(_random_matte(rng, shape)) for _ in range(3))
        u = torch.from_numpy(rng.random(shape) < 0.7)
        removed = u & torch.from_numpy(rng.random(shape) < 0.3)
        before = refine_steps(a8, a4, a1, u, (3, 3))
        after = refine_steps(a8, a4, a1, u & ~removed, (3, 3))
        untouched = removed & ~before.r4 & ~before.r1
        assert torch.equal(after.final[untouched], before.final[untouched])
        assert torch.equal(after.final[removed], a8[removed])
        # the first refine mask only depends on A_8, so it can only shrink
        assert not torch.any(after.r4 & ~before.r4)


def test_binary_coarse_matte_is_left_alone():
    a8 = (torch.rand(1, 2, 8, 8) > 0.5).float()
    out = progressive_refine(a8, torch.rand_like(a8), torch.rand_like(a8), torch.ones_like(a8, dtype=torch.bool))
    assert torch.equal(out, a8)


def test_identical_inputs_are_a_fixed_point():
    a = torch.rand(1, 1, 8, 8)
    u = torch.ones_like(a, dtype=torch.bool)
    assert torch.equal(progressive_refine(a, a, a, u, (5, 3)), a)


def test_every_output_pixel_comes_from_one_input():
    a8, a4, a1 = torch.rand(3, 1, 2, 8, 8).unbind(0)
    u = torch.rand(1, 2, 8, 8) < 0.5
    res = refine_steps(a8, a4, a1, u, (5, 3))
    out = res.final
    assert torch.all((out == a8) | (out == a4) | (out == a1))
    assert not torch.any(res.r4 & ~u) and not torch.any(res.r1 & ~u)
    assert torch.equal(out[~u], a8[~u])


def test_refinement_shapes_must_agree():
    a = torch.rand(1, 1, 8, 8)
    with pytest.raises(InputValidationError):
        progressive_refine(a, torch.rand(1, 1, 4, 4), a, torch.ones_like(a, dtype=torch.bool))
