import random

import numpy as np
import pytest

from blockcascade import (
    ContractViolation, EntryInput, InvalidInputError, NumericError,
    build_mask, embed_prompt, forward, init_model, load_weights, renoise,
    save_weights,
)
from blockcascade.denoiser import LayerKV


COND = embed_prompt("fixture prompt", 16)


def entry(block, latents=None, level=500.0, cond=COND, seed=0):
    if latents is None:
        rng = np.random.default_rng(seed + block)
        latents = rng.standard_normal((3, 16))
    return EntryInput(block_index=block, latents=latents, noise_level=level,
                      conditioning=cond)


def pool_kv(weights, block, level=0.0, cond=COND, seed=0):
    """Self-contained pass of a random block; returns its per-layer KV."""
    mask = build_mask([block], [], "bidirectional", 3)
    out = forward(weights, [entry(block, level=level, cond=cond, seed=seed)], [], mask)
    return out[0].kv


class TestInitModel:
    def test_same_seed_identical(self):
        a = init_model(3, 2, 2, 16, 16)
        b = init_model(3, 2, 2, 16, 16)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_different_seeds_differ(self):
        a = init_model(1, 2, 2, 16, 16)
        b = init_model(2, 2, 2, 16, 16)
        assert not np.array_equal(a.w_in, b.w_in)

    def test_projection_shapes(self):
        w = init_model(0, 2, 2, 16, 16)
        assert w.w_k.shape == (2, 16, 16)
        assert w.w_k[0].shape == (16, 16)
        assert w.head_dim == 8

    def test_bad_dims_rejected(self):
        with pytest.raises(InvalidInputError):
            init_model(0, 0, 2, 16, 16)
        with pytest.raises(InvalidInputError):
            init_model(0, 2, 3, 16, 16)


class TestWeightSnapshot:
    def test_round_trip_bit_exact(self, tmp_path, weights):
        path = tmp_path / "weights.bin"
        save_weights(weights, path)
        loaded = load_weights(path)
        assert loaded.seed == weights.seed
        for x, y in zip(weights.arrays(), loaded.arrays()):
            assert np.array_equal(x, y)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a snapshot at all")
        with pytest.raises(InvalidInputError):
            load_weights(path)


class TestBuildMask:
    def test_causal_batch(self):
        mask = build_mask([5, 6], [4], "causal", 3)
        assert mask.visible_key_blocks(5) == [4, 5]
        assert mask.visible_key_blocks(6) == [4, 5, 6]

    def test_bidirectional_batch(self):
        mask = build_mask([5, 6], [4], "bidirectional", 3)
        assert mask.visible_key_blocks(5) == [4, 5, 6]

    def test_single_block_all_ones(self):
        for mode in ("causal", "bidirectional"):
            mask = build_mask([0], [], mode, 3)
            assert mask.matrix.shape == (3, 3)
            assert mask.matrix.all()

    def test_overlap_rejected(self):
        with pytest.raises(ContractViolation):
            build_mask([4, 5], [5], "causal", 3)

    def test_causal_soundness_random_configs(self):
        # 500 random configurations: no query sees a strictly later block
        rng = random.Random(2024)
        for _ in range(500):
            blocks = rng.sample(range(20), k=rng.randint(1, 6))
            batch = sorted(blocks[: rng.randint(1, len(blocks))])
            pool = sorted(set(blocks) - set(batch))
            mask = build_mask(batch, pool, "causal", rng.choice([1, 2, 3]))
            key_blocks = mask.key_blocks
            for qi, qb in enumerate(mask.batch_blocks):
                row = mask.matrix[qi * mask.block_size]
                for kj, kb in enumerate(key_blocks):
                    visible = row[kj * mask.block_size]
                    assert visible == (kb <= qb)
                assert qb in mask.visible_key_blocks(qb)

    def test_within_block_always_full(self):
        mask = build_mask([3, 7], [1], "causal", 2)
        for qi, qb in enumerate(mask.batch_blocks):
            kj = mask.key_blocks.index(qb)
            sub = mask.matrix[qi * 2:(qi + 1) * 2, kj * 2:(kj + 1) * 2]
            assert sub.all()


class TestForward:
    def test_output_shapes_and_tags(self, weights):
        mask = build_mask([0], [], "bidirectional", 3)
        out = forward(weights, [entry(0, level=750.0)], [], mask)
        assert out[0].x0.shape == (3, 16)
        assert len(out[0].kv) == weights.layers
        for layer, kv in enumerate(out[0].kv):
            assert kv.keys.shape == (3, 2, 8)
            assert kv.noise_tag == 750.0
            assert kv.conditioning_id == COND.id
            assert kv.layer_index == layer

    def test_purity_bit_exact(self, weights):
        mask = build_mask([1, 2], [0], "bidirectional", 3)
        pool = [pool_kv(weights, 0)]
        a = forward(weights, [entry(1), entry(2)], pool, mask)
        b = forward(weights, [entry(1), entry(2)], pool, mask)
        for x, y in zip(a, b):
            assert np.array_equal(x.x0, y.x0)
            for kx, ky in zip(x.kv, y.kv):
                assert np.array_equal(kx.keys, ky.keys)
                assert np.array_equal(kx.values, ky.values)

    def test_noisy_pool_context_changes_output(self, weights):
        # the same block under a clean vs a noisy cache of its predecessor
        mask = build_mask([5], [4], "bidirectional", 3)
        clean = forward(weights, [entry(5)], [pool_kv(weights, 4, level=0.0)], mask)
        noisy = forward(weights, [entry(5)], [pool_kv(weights, 4, level=1000.0)], mask)
        assert not np.array_equal(clean[0].x0, noisy[0].x0)

    def test_pool_perturbation_sensitivity(self, weights):
        rng = np.random.default_rng(77)
        mask = build_mask([5], [4], "bidirectional", 3)
        base_kv = pool_kv(weights, 4)
        base = forward(weights, [entry(5)], [base_kv], mask)[0].x0
        for trial in range(10):
            layer = rng.integers(0, weights.layers)
            which = rng.choice(["keys", "values"])
            bumped = []
            for kv in base_kv:
                if kv.layer_index == layer:
                    arr = getattr(kv, which).copy()
                    arr[rng.integers(0, 3), rng.integers(0, 2), rng.integers(0, 8)] += 0.25
                    fields = {"keys": kv.keys, "values": kv.values, which: arr}
                    bumped.append(LayerKV(kv.block_index, kv.layer_index,
                                          fields["keys"], fields["values"],
                                          kv.noise_tag, kv.conditioning_id))
                else:
                    bumped.append(kv)
            out = forward(weights, [entry(5)], [tuple(bumped)], mask)[0].x0
            assert not np.array_equal(out, base)

    def test_kv_fidelity_recompute(self, weights):
        # pooled KV equals what a fresh forward of the same state recomputes
        mask = build_mask([1, 2], [0], "bidirectional", 3)
        pool = [pool_kv(weights, 0)]
        first = forward(weights, [entry(1), entry(2)], pool, mask)
        again = forward(weights, [entry(1), entry(2)], pool, mask)
        for a, b in zip(first, again):
            for kv_a, kv_b in zip(a.kv, b.kv):
                assert np.array_equal(kv_a.keys, kv_b.keys)
                assert np.array_equal(kv_a.values, kv_b.values)

    def test_conditioning_changes_output(self, weights):
        mask = build_mask([0], [], "bidirectional", 3)
        a = forward(weights, [entry(0, cond=embed_prompt("one", 16))], [], mask)
        b = forward(weights, [entry(0, cond=embed_prompt("two", 16))], [], mask)
        assert not np.array_equal(a[0].x0, b[0].x0)

    def test_non_finite_input_rejected(self, weights):
        bad = np.full((3, 16), np.inf)
        mask = build_mask([0], [], "bidirectional", 3)
        with pytest.raises(NumericError):
            forward(weights, [entry(0, latents=bad)], [], mask)

    def test_shape_mismatch_rejected(self, weights):
        mask = build_mask([0], [], "bidirectional", 3)
        with pytest.raises(ContractViolation):
            forward(weights, [entry(0, latents=np.zeros((3, 8)))], [], mask)

    def test_mask_batch_mismatch_rejected(self, weights):
        mask = build_mask([0, 1], [], "bidirectional", 3)
        with pytest.raises(ContractViolation):
            forward(weights, [entry(0)], [], mask)

    def test_mask_pool_mismatch_rejected(self, weights):
        mask = build_mask([1], [0], "bidirectional", 3)
        with pytest.raises(ContractViolation):
            forward(weights, [entry(1)], [], mask)


class TestRenoise:
    def test_level_zero_returns_x0(self):
        x0 = np.arange(48.0).reshape(3, 16)
        eps = np.ones((3, 16))
        assert np.array_equal(renoise(x0, eps, 0.0), x0)

    def test_level_full_returns_eps(self):
        x0 = np.arange(48.0).reshape(3, 16)
        eps = np.ones((3, 16))
        assert np.array_equal(renoise(x0, eps, 1000.0), eps)

    def test_level_750_linear_form(self):
        rng = np.random.default_rng(0)
        x0 = rng.standard_normal((3, 16))
        eps = rng.standard_normal((3, 16))
        sigma = 750.0 / 1000.0
        assert np.array_equal(renoise(x0, eps, 750.0),
                              (1.0 - sigma) * x0 + sigma * eps)

    def test_affine_in_both_arguments(self):
        rng = np.random.default_rng(1)
        x0a, x0b = rng.standard_normal((2, 3, 16))
        eps = rng.standard_normal((3, 16))
        level = 400.0
        lhs = renoise(x0a + x0b, eps, level) + renoise(np.zeros((3, 16)),
                                                       np.zeros((3, 16)), level)
        rhs = renoise(x0a, eps, level) + renoise(x0b, np.zeros((3, 16)), level)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            renoise(np.zeros((3, 16)), np.zeros((3, 8)), 100.0)

    def test_level_out_of_range_rejected(self):
        with pytest.raises(ContractViolation):
            renoise(np.zeros((3, 16)), np.zeros((3, 16)), 1001.0)
