import json

import numpy as np
import pytest
import torch

from ficm.checkpoint import CHECKPOINT_VERSION, load_predictor, read_checkpoint, save_predictor
from ficm.config import CorrelationConfig
from ficm.curiosity import FlowCuriosity
from ficm.config import CuriosityConfig
from ficm.errors import InvalidInputError, NumericError
from ficm.flownets import (
    FlowPredictorC,
    FlowPredictorS,
    build_flow_predictor,
    count_parameters,
    predict_flow,
)

from fd_util import analytic_param_gradient, fd_param_gradient, norm_rel_error


def tiny_s(dtype=torch.float32, resolution=8):
    net = FlowPredictorS(resolution=resolution, channels=(4, 6, 8), deconv_channels=(6, 4), seed=11)
    return net.to(dtype)


def tiny_c(dtype=torch.float32, resolution=24):
    net = FlowPredictorC(
        resolution=resolution,
        channels=(4, 6, 8),
        redirect_channels=4,
        merged_channels=8,
        deconv_channels=(6, 4),
        correlation_cfg=CorrelationConfig(max_displacement=2, patch_radius=0),
        seed=12,
    )
    return net.to(dtype)


def smooth_frames(rng, n, size, dtype=np.float32):
    """Random low-frequency frames in [0,1]; keep warping gradients tame."""
    ys, xs = np.mgrid[0:size, 0:size] / size
    frames = []
    for _ in range(n):
        a, b, c, d = rng.uniform(1.0, 4.0, size=4)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        img = 0.5 + 0.25 * np.sin(a * xs + b * ys + phase[0]) + 0.25 * np.cos(c * xs - d * ys + phase[1])
        frames.append(img.astype(dtype))
    return frames


class TestShapesAndDeterminism:
    @pytest.mark.parametrize("arch", ["ficm-s", "ficm-c"])
    @pytest.mark.parametrize("res", [16, 27, 42])
    def test_output_matches_input_resolution(self, arch, res):
        pred = build_flow_predictor(arch, resolution=res, seed=0)
        rng = np.random.default_rng(res)
        a = rng.random((res, res), dtype=np.float32)
        b = rng.random((res, res), dtype=np.float32)
        flow = predict_flow(pred, a, b)
        assert flow.u.shape == (res, res)
        assert flow.v.shape == (res, res)
        assert np.isfinite(flow.u).all() and np.isfinite(flow.v).all()

    def test_deterministic_given_params_and_inputs(self):
        pred = build_flow_predictor("ficm-s", 42, seed=5)
        rng = np.random.default_rng(1)
        a = rng.random((42, 42), dtype=np.float32)
        b = rng.random((42, 42), dtype=np.float32)
        f1 = predict_flow(pred, a, b)
        f2 = predict_flow(pred, a, b)
        assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)

    def test_seeded_init_reproducible(self):
        p1 = FlowPredictorS(seed=99)
        p2 = FlowPredictorS(seed=99)
        for a, b in zip(p1.parameters(), p2.parameters()):
            assert torch.equal(a, b)

    def test_swapped_inputs_give_backward_flow(self):
        pred = build_flow_predictor("ficm-s", 16, seed=3)
        rng = np.random.default_rng(2)
        a = rng.random((16, 16), dtype=np.float32)
        b = rng.random((16, 16), dtype=np.float32)
        fwd = predict_flow(pred, a, b)
        bwd = predict_flow(pred, b, a)
        assert not np.allclose(fwd.u, bwd.u)


class TestWeightSharing:
    def test_encoder_parameters_exist_once(self):
        pred = tiny_c()
        names = [n for n, _ in pred.named_parameters()]
        for layer in ("conv1", "conv2", "conv3"):
            assert sum(n.startswith(layer + ".") for n in names) == 2  # weight + bias

    def test_mutating_encoder_affects_both_paths(self):
        pred = tiny_c()
        x = torch.rand(1, 1, 24, 24)
        y = torch.rand(1, 1, 24, 24)
        with torch.no_grad():
            before_a = pred.encode(x)[2].clone()
            before_b = pred.encode(y)[2].clone()
            pred.conv2.weight.add_(0.5)
            after_a = pred.encode(x)[2]
            after_b = pred.encode(y)[2]
        assert not torch.allclose(before_a, after_a)
        assert not torch.allclose(before_b, after_b)


def icm_count_formula(res, stack, actions, hidden=256, ch=32):
    """Independent closed-form parameter count for the ICM baseline."""
    enc = (ch * stack * 9 + ch) + 3 * (ch * ch * 9 + ch)
    side = res
    for _ in range(4):
        side = (side - 1) // 2 + 1
    feat = ch * side * side
    inverse = (2 * feat * hidden + hidden) + (hidden * actions + actions)
    forward = ((feat + actions) * hidden + hidden) + (hidden * feat + feat)
    return enc + inverse + forward


class TestParameterCounts:
    def test_icm_exact(self):
        assert count_parameters("ICM", 42, frame_stack=4, num_actions=4) == 326_692
        assert icm_count_formula(42, 4, 4) == 326_692

    def test_icm_component_breakdown(self):
        enc = (32 * 4 * 9 + 32) + 3 * (32 * 32 * 9 + 32)
        inverse = (576 * 256 + 256) + (256 * 4 + 4)
        forward = (292 * 256 + 256) + (256 * 288 + 288)
        assert enc == 28_928
        assert inverse == 148_740
        assert forward == 149_024
        assert enc + inverse + forward == 326_692

    def test_ficm_counts_within_band(self):
        s = count_parameters("FICM-S", 42)
        c = count_parameters("FICM-C", 42)
        assert abs(s - 182_594) <= 0.30 * 182_594
        assert abs(c - 257_570) <= 0.30 * 257_570
        assert c > s

    def test_ordering(self):
        counts = {tag: count_parameters(tag, 42) for tag in ("icm", "ficm-c", "ficm-s", "icm-pixels")}
        assert counts["icm"] > counts["ficm-c"] > counts["ficm-s"] > counts["icm-pixels"]

    def test_doubled_resolution_changes_only_flat_dependent_layers(self):
        assert count_parameters("ICM", 84, 4, 4) == icm_count_formula(84, 4, 4)
        # fully-convolutional predictors are resolution-independent
        assert count_parameters("FICM-S", 84) == count_parameters("FICM-S", 42)

    def test_unknown_tag_rejected(self):
        with pytest.raises(InvalidInputError):
            count_parameters("flownet-xl", 42)

    def test_tiny_variants_under_gradcheck_budget(self):
        assert sum(p.numel() for p in tiny_s().parameters()) <= 5_000
        assert sum(p.numel() for p in tiny_c().parameters()) <= 5_000


class TestGradients:
    def _loss_fn(self, pred, frames, zeta=1.0):
        cfg = CuriosityConfig(module_kind=pred.arch_tag, zeta=zeta)
        curiosity = FlowCuriosity(pred, cfg)
        a, b = frames

        def loss():
            lf, lb = curiosity.pair_losses(a, b)
            return (lf + lb).mean()

        return loss

    @pytest.mark.parametrize("builder,res", [(tiny_s, 8), (tiny_c, 24)])
    def test_gradcheck_double(self, builder, res):
        pred = builder(torch.float64, res)
        rng = np.random.default_rng(7)
        fa, fb = smooth_frames(rng, 2, res, np.float64)
        a = torch.tensor(fa).view(1, 1, res, res)
        b = torch.tensor(fb).view(1, 1, res, res)
        loss = self._loss_fn(pred, (a, b))
        analytic = analytic_param_gradient(loss, pred)
        numeric = fd_param_gradient(loss, pred, h=1e-5)
        assert norm_rel_error(analytic, numeric) <= 1e-5

    def test_gradcheck_single(self):
        pred = tiny_s(torch.float32, 8)
        rng = np.random.default_rng(8)
        fa, fb = smooth_frames(rng, 2, 8, np.float32)
        a = torch.tensor(fa).view(1, 1, 8, 8)
        b = torch.tensor(fb).view(1, 1, 8, 8)
        loss = self._loss_fn(pred, (a, b))
        analytic = analytic_param_gradient(loss, pred)
        numeric = fd_param_gradient(loss, pred, h=1e-3)
        assert norm_rel_error(analytic, numeric) <= 1e-3


class TestPredictFlowValidation:
    def test_shape_mismatch(self):
        pred = build_flow_predictor("ficm-s", 16, seed=0)
        with pytest.raises(InvalidInputError):
            predict_flow(pred, np.zeros((16, 16)), np.zeros((16, 17)))

    def test_resolution_mismatch(self):
        pred = build_flow_predictor("ficm-s", 16, seed=0)
        with pytest.raises(InvalidInputError):
            predict_flow(pred, np.zeros((8, 8)), np.zeros((8, 8)))

    def test_non_finite_input(self):
        pred = build_flow_predictor("ficm-s", 8, seed=0)
        bad = np.zeros((8, 8))
        bad[0, 0] = np.inf
        with pytest.raises(NumericError):
            predict_flow(pred, bad, np.zeros((8, 8)))

    def test_numeric_error_names_layer(self):
        pred = tiny_s()
        with torch.no_grad():
            pred.conv2.weight.fill_(1e30)
        rng = np.random.default_rng(0)
        with pytest.raises(NumericError, match="conv2"):
            predict_flow(pred, rng.random((8, 8)), rng.random((8, 8)))


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        pred = tiny_s()
        path = tmp_path / "pred.npz"
        save_predictor(path, pred)
        other = tiny_s()
        with torch.no_grad():
            other.conv1.weight.zero_()
        load_predictor(path, other)
        for a, b in zip(pred.parameters(), other.parameters()):
            assert torch.equal(a, b)

    def test_rejects_wrong_version(self, tmp_path):
        pred = tiny_s()
        path = tmp_path / "pred.npz"
        save_predictor(path, pred)
        meta, groups = read_checkpoint(path)
        meta["version"] = CHECKPOINT_VERSION + 1
        arrays = {f"{g}.{k}": v for g, tensors in groups.items() for k, v in tensors.items()}
        np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)
        with pytest.raises(InvalidInputError, match="version"):
            load_predictor(path, tiny_s())

    def test_rejects_arch_mismatch(self, tmp_path):
        path = tmp_path / "pred.npz"
        save_predictor(path, tiny_s())
        with pytest.raises(InvalidInputError, match="arch_tag"):
            load_predictor(path, tiny_c())

    def test_rejects_resolution_mismatch(self, tmp_path):
        path = tmp_path / "pred.npz"
        save_predictor(path, tiny_s(resolution=8))
        with pytest.raises(InvalidInputError, match="resolution"):
            load_predictor(path, tiny_s(resolution=16))

    def test_parameter_names_stable(self, tmp_path):
        path = tmp_path / "pred.npz"
        save_predictor(path, tiny_s())
        _, groups = read_checkpoint(path)
        assert set(groups["predictor"]) == {n for n, _ in tiny_s().state_dict().items()}
