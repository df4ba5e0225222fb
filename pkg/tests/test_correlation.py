import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ficm.config import CorrelationConfig
from ficm.errors import ConfigError, InvalidInputError
from ficm.flownets import correlation


def correlation_oracle(a, b, d, k):
    """Direct loop evaluation of the patch-comparison definition (float64)."""
    c, h, w = a.shape
    dd = 2 * d + 1
    out = np.zeros((dd * dd, h, w))

    def val(m, ch, y, x):
        if 0 <= y < h and 0 <= x < w:
            return m[ch, y, x]
        return 0.0

    for i in range(dd):
        for j in range(dd):
            dy, dx = i - d, j - d
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for oy in range(-k, k + 1):
                        for ox in range(-k, k + 1):
                            for ch in range(c):
                                acc += val(a, ch, y + oy, x + ox) * val(b, ch, y + dy + oy, x + dx + ox)
                    out[i * dd + j, y, x] = acc
    return out


class TestCorrelationExamples:
    def test_identical_constant_maps(self):
        v = 1.7
        c = 5
        maps = np.full((c, 4, 4), v)
        out = correlation(maps, maps, CorrelationConfig(max_displacement=0, patch_radius=0))
        assert out.shape == (1, 4, 4)
        np.testing.assert_allclose(out, c * v * v, rtol=1e-12)

    def test_single_pixel_is_dot_product(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(6, 1, 1))
        b = rng.normal(size=(6, 1, 1))
        out = correlation(a, b, CorrelationConfig(max_displacement=0, patch_radius=0))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == pytest.approx(float(a[:, 0, 0] @ b[:, 0, 0]), abs=1e-12)

    def test_channel_count_is_neighborhood_squared(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 5, 5))
        for d in (0, 1, 2, 3):
            out = correlation(a, a, CorrelationConfig(max_displacement=d, patch_radius=0))
            assert out.shape == ((2 * d + 1) ** 2, 5, 5)

    def test_matches_oracle_d2(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 6, 6))
        b = rng.normal(size=(4, 6, 6))
        out = correlation(a, b, CorrelationConfig(max_displacement=2, patch_radius=0))
        np.testing.assert_allclose(out, correlation_oracle(a, b, 2, 0), atol=1e-6)

    def test_matches_oracle_with_patch_radius(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(3, 5, 5))
        b = rng.normal(size=(3, 5, 5))
        out = correlation(a, b, CorrelationConfig(max_displacement=1, patch_radius=1))
        np.testing.assert_allclose(out, correlation_oracle(a, b, 1, 1), atol=1e-6)


class TestCorrelationProperties:
    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 2**16),
        c=st.integers(1, 8),
        h=st.integers(1, 8),
        w=st.integers(1, 8),
        d=st.integers(0, 2),
    )
    def test_oracle_equivalence(self, seed, c, h, w, d):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(c, h, w))
        b = rng.normal(size=(c, h, w))
        out = correlation(a, b, CorrelationConfig(max_displacement=d, patch_radius=0))
        np.testing.assert_allclose(out, correlation_oracle(a, b, d, 0), atol=1e-6)


class TestCorrelationErrors:
    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            correlation(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)), CorrelationConfig())

    def test_negative_displacement_rejected(self):
        with pytest.raises(ConfigError):
            correlation(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), CorrelationConfig(max_displacement=-1))

    def test_neighborhood_size_invariant(self):
        for d in range(5):
            assert CorrelationConfig(max_displacement=d).neighborhood_size == 2 * d + 1
