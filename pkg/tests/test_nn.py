"""Model zoo: shapes, gradients through composites, analytic counters,
benchmarking identities, and the checkpoint format."""

import copy

import numpy as np
import pytest

import robustlab as rl
from robustlab import nn as N
from robustlab import tensor as T
from robustlab.tensor import ShapeError, Tensor

from conftest import TINY_VIT, fd_param_error


@pytest.fixture(scope="module")
def toy_vit():
    return rl.ViTModel(rl.TOY_VIT, seed=7)


class TestViTConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ValueError):
            rl.ViTConfig(image_size=30, patch_size=4)
        with pytest.raises(ValueError):
            rl.ViTConfig(embed_dim=65, heads=4)
        with pytest.raises(ValueError):
            rl.ViTConfig(depth=0)
        with pytest.raises(ValueError):
            rl.ViTConfig(num_classes=1)


class TestViTForward:
    def test_shapes_toy_preset(self, toy_vit, rng):
        imgs = rng.uniform(0, 1, size=(2, 3, 32, 32)).astype(np.float32)
        tokens, ct, logits = toy_vit.forward(imgs)
        assert len(tokens) == 6
        assert all(tk.shape == (2, 64, 64) for tk in tokens)
        assert ct.shape == (2, 64)
        assert logits.shape == (2, 2)

    def test_batch_independence(self, toy_vit, rng):
        img = rng.uniform(0, 1, size=(1, 3, 32, 32)).astype(np.float32)
        pair = np.concatenate([img, img])
        tokens, ct, logits = toy_vit.forward(pair)
        np.testing.assert_array_equal(logits.data[0], logits.data[1])
        np.testing.assert_array_equal(ct.data[0], ct.data[1])
        for tk in tokens:
            np.testing.assert_array_equal(tk.data[0], tk.data[1])

    def test_dimension_mismatch_rejected(self, toy_vit, rng):
        with pytest.raises(ShapeError):
            toy_vit.forward(rng.uniform(0, 1, size=(1, 3, 16, 16)).astype(np.float32))

    def test_forward_deterministic(self, toy_vit, rng):
        imgs = rng.uniform(0, 1, size=(2, 3, 32, 32)).astype(np.float32)
        a = toy_vit.logits(imgs).data
        b = toy_vit.logits(imgs.copy()).data
        assert a.tobytes() == b.tobytes()

    def test_input_gradient_vs_finite_differences(self, rng):
        model = rl.ViTModel(TINY_VIT, seed=3)
        img = rng.uniform(0.2, 0.8, size=(2, 3, 8, 8)).astype(np.float32)
        y = np.array([0, 1])
        err = rl.grad_check(lambda v: T.cross_entropy(model.logits(v), y), Tensor(img), h=1e-3)
        assert err < 1e-2

    def test_parameter_gradients_vs_finite_differences(self, rng):
        model = rl.ViTModel(TINY_VIT, seed=3)
        img = rng.uniform(0.2, 0.8, size=(2, 3, 8, 8)).astype(np.float32)
        y = np.array([0, 1])
        loss_fn = lambda: T.cross_entropy(model.logits(img), y)
        worst = 0.0
        for p in model.parameters():
            n = p.data.size
            coords = None if n <= 64 else rng.choice(n, size=24, replace=False).tolist()
            worst = max(worst, fd_param_error(model, loss_fn, p, h=1e-3, coords=coords))
        assert worst < 1e-2


class TestCnnHead:
    def test_logit_shape(self, rng):
        head = rl.CnnHead(64, 2, seed=5)
        tokens = rng.normal(size=(2, 64, 64)).astype(np.float32)
        assert head.forward(tokens).shape == (2, 2)

    def test_zero_tokens_yield_output_bias(self):
        head = rl.CnnHead(16, 2, seed=5)  # biases are zero at init
        out = head.forward(np.zeros((3, 16, 16), np.float32))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2), np.float32))

    def test_non_square_token_count_rejected(self, rng):
        head = rl.CnnHead(8, 2, seed=5)
        with pytest.raises(ShapeError):
            head.forward(rng.normal(size=(1, 12, 8)).astype(np.float32))

    def test_gradient_through_head(self, rng):
        head = rl.CnnHead(4, 2, seed=5)
        tokens = rng.uniform(-1, 1, size=(2, 9, 4)).astype(np.float32)
        y = np.array([0, 1])
        err = rl.grad_check(
            lambda v: T.cross_entropy(head.forward(v), y), Tensor(tokens), h=1e-3
        )
        assert err < 1e-2

    def test_batch_permutation_equivariance(self, rng):
        head = rl.CnnHead(16, 2, seed=9)
        tokens = rng.normal(size=(5, 16, 16)).astype(np.float32)
        out = head.forward(tokens).data
        perm = np.array([3, 0, 4, 1, 2])
        out_p = head.forward(tokens[perm]).data
        # BLAS row-blocking prevents bit-exact equality across batch orders
        np.testing.assert_allclose(out_p, out[perm], atol=1e-6)


class TestImageCnns:
    @pytest.mark.parametrize("cls", [rl.DistilledCnn, rl.ExtractionCnn])
    def test_logit_shapes(self, cls, rng):
        model = cls(3, 2, seed=4)
        imgs = rng.uniform(0, 1, size=(2, 3, 32, 32)).astype(np.float32)
        assert model.forward(imgs).shape == (2, 2)

    def test_distilled_smaller_than_ensemble(self):
        ens_params = rl.count_params(rl.TOY_VIT) + 3 * rl.CnnHead(64, 2).num_params()
        assert rl.DistilledCnn(3, 2).num_params() < ens_params

    def test_gradient_through_distilled(self, rng):
        model = rl.DistilledCnn(1, 2, seed=4)
        imgs = rng.uniform(0, 1, size=(2, 1, 8, 8)).astype(np.float32)
        y = np.array([1, 0])
        err = rl.grad_check(
            lambda v: T.cross_entropy(model.forward(v), y), Tensor(imgs), h=1e-3
        )
        assert err < 1e-2


class TestCountParams:
    def test_single_affine_layer(self):
        lin = rl.LinearClassifier(3, 4, seed=0)
        assert rl.count_params(lin) == 3 * 4 + 4

    def test_toy_preset_matches_layer_by_layer_enumeration(self, toy_vit):
        c = rl.TOY_VIT
        # independent enumeration, one term per parameter tensor
        patch_dim = c.channels * c.patch_size ** 2
        expected = 0
        expected += patch_dim * c.embed_dim + c.embed_dim      # patch projection
        expected += c.embed_dim                                # class token
        expected += (c.num_patches + 1) * c.embed_dim          # position table
        for _ in range(c.depth):
            expected += 2 * c.embed_dim                        # norm 1
            expected += c.embed_dim * 3 * c.embed_dim + 3 * c.embed_dim
            expected += c.embed_dim * c.embed_dim + c.embed_dim
            expected += 2 * c.embed_dim                        # norm 2
            expected += c.embed_dim * c.mlp_dim + c.mlp_dim
            expected += c.mlp_dim * c.embed_dim + c.embed_dim
        expected += 2 * c.embed_dim                            # final norm
        expected += c.embed_dim * c.num_classes + c.num_classes
        assert expected == 208450
        assert rl.count_params(c) == expected
        assert rl.count_params(toy_vit) == expected

    def test_full_scale_preset_near_published_size(self):
        assert 83.9e6 <= rl.count_params(rl.VIT_B16) <= 87.4e6

    def test_config_and_instance_agree(self):
        model = rl.ViTModel(TINY_VIT, seed=0)
        assert rl.count_params(model) == rl.count_params(TINY_VIT)


class TestEstimateFlops:
    def test_affine_layer(self):
        # one multiply-accumulate per weight plus one add per bias
        assert N.linear_flops(3, 4) == 3 * 4 + 4

    def test_conv_case(self):
        # 3x3 kernel over 8x8 single-channel input, no padding: 36 outputs
        assert N.conv2d_flops(1, 1, 3, 6, 6) == 36 * (9 + 1)

    def test_full_scale_preset_within_ten_percent_of_published(self):
        flops = rl.estimate_flops(rl.VIT_B16)
        assert abs(flops - 16.86e9) <= 0.1 * 16.86e9

    def test_attention_terms_scale_quadratically_in_tokens(self):
        small = rl.estimate_flops(rl.ViTConfig(16, 4, 3, 64, 1, 4, 128, 2))
        large = rl.estimate_flops(rl.ViTConfig(32, 4, 3, 64, 1, 4, 128, 2))
        assert large > 4 * small  # 4x tokens, attention grows 16x

    def test_cnn_flops_positive_and_ordered(self):
        d = rl.estimate_flops(rl.DistilledCnn(3, 2), (3, 32, 32))
        e = rl.estimate_flops(rl.ExtractionCnn(3, 2), (3, 32, 32))
        assert 0 < e < d


class TestBenchmark:
    def test_throughput_is_batch_over_latency(self, rng):
        model = rl.LinearClassifier(12, 2, seed=1)
        batch = rng.uniform(0, 1, size=(8, 12)).astype(np.float32)
        latency, throughput, _ = rl.benchmark_model(model, batch, repeats=3)
        assert throughput == pytest.approx(8 / latency)

    def test_weight_bytes_stable_across_runs(self, rng):
        model = rl.ExtractionCnn(3, 2, seed=1)
        batch = rng.uniform(0, 1, size=(2, 3, 16, 16)).astype(np.float32)
        _, _, w1 = rl.benchmark_model(model, batch, repeats=3)
        _, _, w2 = rl.benchmark_model(model, batch, repeats=3)
        assert w1 == w2

    def test_repeats_floor(self, rng):
        model = rl.LinearClassifier(4, 2, seed=1)
        with pytest.raises(ValueError):
            rl.benchmark_model(model, rng.uniform(size=(2, 4)).astype(np.float32), repeats=2)

    def test_distilled_weighs_less_than_ensemble(self, rng):
        backbone = rl.ViTModel(rl.TOY_VIT, seed=1)
        ens = rl.EnsembleModel(backbone, [rl.CnnHead(64, 2, seed=i) for i in range(3)])
        student = rl.DistilledCnn(3, 2, seed=2)
        assert len(rl.model_to_bytes(student)) < len(rl.model_to_bytes(ens))

    def test_size_ratio_echo(self):
        backbone = rl.ViTModel(rl.TOY_VIT, seed=1)
        ens = rl.EnsembleModel(backbone, [rl.CnnHead(64, 2, seed=i) for i in range(3)])
        ratio = len(rl.model_to_bytes(ens)) / len(rl.model_to_bytes(rl.DistilledCnn(3, 2)))
        assert ratio >= 3.0


class TestCheckpoints:
    @pytest.mark.parametrize("build", [
        lambda: rl.ViTModel(TINY_VIT, seed=2),
        lambda: rl.CnnHead(8, 2, seed=2),
        lambda: rl.DistilledCnn(3, 2, seed=2),
        lambda: rl.ExtractionCnn(3, 2, seed=2),
        lambda: rl.LinearClassifier(10, 2, seed=2),
        lambda: rl.EnsembleModel(rl.ViTModel(TINY_VIT, seed=2),
                                 [rl.CnnHead(8, 2, seed=3)], fusion="mean"),
    ])
    def test_round_trip_bit_identical(self, build, tmp_path):
        model = build()
        path = tmp_path / "m.sedm"
        rl.save_model(model, path)
        back = rl.load_model(path)
        assert type(back) is type(model)
        for a, b in zip(model.parameters(), back.parameters()):
            assert a.data.tobytes() == b.data.tobytes()
        assert rl.model_to_bytes(back) == rl.model_to_bytes(model)

    def test_payload_bytes_equal_param_count_times_four_plus_headers(self):
        model = rl.DistilledCnn(3, 2, seed=1)
        blob = rl.model_to_bytes(model)
        params = model.parameters()
        file_header = 4 + 2 + 1 + 2 + 4 * 2 + 4  # magic, version, kind, n-cfg, cfg, count
        per_tensor_headers = sum(4 + 2 + 1 + 4 * p.data.ndim for p in params)
        payload = len(blob) - file_header - per_tensor_headers
        assert payload == rl.count_params(model) * 4

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            rl.model_from_bytes(b"JUNK" + bytes(64))

    def test_ensemble_preserves_fusion_and_block_indices(self, tmp_path):
        backbone = rl.ViTModel(TINY_VIT, seed=2)
        # depth-1 backbone: the single head taps block 0
        ens = rl.EnsembleModel(backbone, [rl.CnnHead(8, 2, seed=4)],
                               fusion="mean", block_indices=[0])
        path = tmp_path / "e.sedm"
        rl.save_model(ens, path)
        back = rl.load_model(path)
        assert back.fusion == "mean"
        assert back.block_indices == [0]

    def test_loaded_model_predicts_identically(self, rng, tmp_path):
        model = rl.ExtractionCnn(3, 2, seed=8)
        imgs = rng.uniform(0, 1, size=(4, 3, 16, 16)).astype(np.float32)
        before = model.forward(imgs).data
        rl.save_model(model, tmp_path / "m.sedm")
        after = rl.load_model(tmp_path / "m.sedm").forward(imgs).data
        assert before.tobytes() == after.tobytes()


class TestInitDeterminism:
    def test_same_seed_same_weights(self):
        a = rl.ViTModel(TINY_VIT, seed=5)
        b = rl.ViTModel(TINY_VIT, seed=5)
        for p, q in zip(a.parameters(), b.parameters()):
            assert p.data.tobytes() == q.data.tobytes()

    def test_different_seed_different_weights(self):
        a = rl.ViTModel(TINY_VIT, seed=5)
        b = rl.ViTModel(TINY_VIT, seed=6)
        assert any(
            p.data.tobytes() != q.data.tobytes()
            for p, q in zip(a.parameters(), b.parameters())
        )

    def test_deepcopy_decouples_weights(self):
        a = rl.ViTModel(TINY_VIT, seed=5)
        b = copy.deepcopy(a)
        b.parameters()[0].data[...] += 1.0
        assert a.parameters()[0].data.tobytes() != b.parameters()[0].data.tobytes()
