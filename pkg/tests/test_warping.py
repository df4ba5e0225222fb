import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ficm.config import WarpConfig
from ficm.errors import InvalidInputError, NumericError
from ficm.warping import bilinear_sample, warp, warp_batch

from fd_util import fd_tensor_gradient, norm_rel_error


def random_frame(rng, h=12, w=12):
    return rng.random((h, w)).astype(np.float32)


class TestBilinearSample:
    def test_integer_coordinates_exact(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7))
        for y in range(5):
            for x in range(7):
                assert bilinear_sample(img, x, y) == pytest.approx(img[y, x], abs=1e-12)

    def test_midpoint_is_average(self):
        img = np.array([[1.0, 3.0], [5.0, 7.0]])
        assert bilinear_sample(img, 0.5, 0.0) == pytest.approx(2.0)
        assert bilinear_sample(img, 0.0, 0.5) == pytest.approx(3.0)
        assert bilinear_sample(img, 0.5, 0.5) == pytest.approx(4.0)

    def test_clamps_to_border(self):
        rng = np.random.default_rng(1)
        img = rng.random((6, 6))
        assert bilinear_sample(img, -5.0, 2.0) == pytest.approx(img[2, 0])
        assert bilinear_sample(img, 100.0, 3.0) == pytest.approx(img[3, 5])
        assert bilinear_sample(img, 2.0, -9.0) == pytest.approx(img[0, 2])

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            bilinear_sample(np.zeros((0, 3)), 0, 0)


class TestWarpIdentities:
    def test_zero_flow_is_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            frame = random_frame(rng)
            out = warp(frame, np.zeros((2, 12, 12)), WarpConfig(beta=1.0))
            assert np.abs(out - frame).max() <= 1e-6

    def test_beta_zero_is_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            frame = random_frame(rng)
            flow = rng.normal(scale=3.0, size=(2, 12, 12))
            out = warp(frame, flow, WarpConfig(beta=0.0))
            assert np.abs(out - frame).max() <= 1e-6

    @pytest.mark.parametrize("shift", [(2, 0), (-2, 0), (0, 2), (0, -2), (1, 1), (-1, 2), (2, -1), (-2, -2)])
    def test_integer_shift_recovery(self, shift):
        dx, dy = shift
        rng = np.random.default_rng(4)
        frame = rng.random((16, 16))
        shifted = np.roll(frame, (dy, dx), axis=(0, 1))
        flow = np.zeros((2, 16, 16))
        flow[0] = dx
        flow[1] = dy
        out = warp(shifted, flow, 1.0)
        ys = slice(max(0, -dy), 16 - max(0, dy))
        xs = slice(max(0, -dx), 16 - max(0, dx))
        assert np.abs(out[ys, xs] - frame[ys, xs]).max() <= 1e-5

    def test_matches_bilinear_sample_pointwise(self):
        rng = np.random.default_rng(5)
        frame = rng.random((7, 9))
        flow = rng.normal(scale=1.7, size=(2, 7, 9))
        out = warp(frame, flow, 1.0)
        for y in range(7):
            for x in range(9):
                expect = bilinear_sample(frame, x + flow[0, y, x], y + flow[1, y, x])
                assert out[y, x] == pytest.approx(expect, abs=1e-9)


class TestWarpProperties:
    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
    def test_linearity_in_source(self, alpha, seed):
        rng = np.random.default_rng(seed)
        s1 = rng.random((8, 8))
        s2 = rng.random((8, 8))
        flow = rng.normal(scale=2.0, size=(2, 8, 8))
        blended = warp(alpha * s1 + (1 - alpha) * s2, flow, 1.0)
        separate = alpha * warp(s1, flow, 1.0) + (1 - alpha) * warp(s2, flow, 1.0)
        assert np.abs(blended - separate).max() <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), beta=st.floats(0.0, 4.0))
    def test_range_preservation(self, seed, beta):
        rng = np.random.default_rng(seed)
        frame = rng.random((9, 9))
        flow = rng.normal(scale=3.0, size=(2, 9, 9))
        out = warp(frame, flow, beta)
        assert out.min() >= frame.min() - 1e-12
        assert out.max() <= frame.max() + 1e-12


class TestWarpErrors:
    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            warp(np.zeros((4, 4)), np.zeros((2, 5, 5)), 1.0)
        with pytest.raises(InvalidInputError):
            warp_batch(torch.zeros(1, 1, 4, 4), torch.zeros(1, 2, 5, 5))

    def test_non_finite_flow(self):
        flow = np.zeros((2, 4, 4))
        flow[0, 1, 1] = np.nan
        with pytest.raises(NumericError):
            warp(np.zeros((4, 4)), flow, 1.0)


class TestWarpGradients:
    def _setup(self):
        rng = np.random.default_rng(6)
        source = torch.tensor(rng.random((1, 1, 6, 6)), dtype=torch.float64, requires_grad=True)
        # keep fractional offsets away from pixel-boundary kinks
        flow = torch.tensor(
            rng.uniform(0.2, 0.8, size=(1, 2, 6, 6)) * np.sign(rng.normal(size=(1, 2, 6, 6))),
            dtype=torch.float64,
            requires_grad=True,
        )
        weights = torch.tensor(rng.normal(size=(1, 1, 6, 6)), dtype=torch.float64)
        return source, flow, weights

    def test_gradient_wrt_flow(self):
        source, flow, weights = self._setup()

        def loss_fn():
            return (warp_batch(source, flow, beta=1.0) * weights).sum()

        loss_fn().backward()
        analytic = flow.grad.detach().numpy().copy()
        numeric = fd_tensor_gradient(loss_fn, flow.detach(), h=1e-6)
        assert norm_rel_error(analytic, numeric) <= 1e-4

    def test_gradient_wrt_source(self):
        source, flow, weights = self._setup()

        def loss_fn():
            return (warp_batch(source, flow, beta=1.0) * weights).sum()

        loss_fn().backward()
        analytic = source.grad.detach().numpy().copy()
        numeric = fd_tensor_gradient(loss_fn, source.detach(), h=1e-6)
        assert norm_rel_error(analytic, numeric) <= 1e-4
