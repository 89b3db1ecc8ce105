import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wildsynth.diffnet import ParamStore, grad_check
from wildsynth.encoding import (
    FreqConfig,
    HashGridConfig,
    HashGridTable,
    freq_encode,
    freq_encode_backward,
    hash_index,
    level_resolution,
)
from wildsynth.errors import ConfigError


class TestFreqEncode:
    def test_zero_input_two_bands(self):
        y = freq_encode(np.array([0.0]), FreqConfig(2, include_input=False))
        assert np.allclose(y, [0.0, 1.0, 0.0, 1.0])

    def test_one_at_band_zero(self):
        y = freq_encode(np.array([1.0]), FreqConfig(1, include_input=False))
        assert np.allclose(y, [0.0, -1.0], atol=1e-12)

    def test_half_with_input(self):
        y = freq_encode(np.array([0.5]), FreqConfig(2, include_input=True))
        assert np.allclose(y, [0.5, 1.0, 0.0, 0.0, -1.0], atol=1e-12)

    def test_output_width(self):
        cfg = FreqConfig(6, include_input=True)
        x = np.zeros((7, 3))
        assert freq_encode(x, cfg).shape == (7, cfg.output_width(3))

    @given(st.lists(st.floats(min_value=-1, max_value=1), min_size=1, max_size=4))
    def test_bands_bounded(self, vals):
        x = np.array(vals)
        y = freq_encode(x, FreqConfig(5, include_input=False))
        assert np.all(np.abs(y) <= 1.0 + 1e-12)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        cfg = FreqConfig(4, include_input=True)
        x = rng.uniform(-1, 1, size=(5, 3))
        dy = rng.standard_normal((5, cfg.output_width(3)))
        dx = freq_encode_backward(x, cfg, dy)
        h = 1e-6
        for i in range(5):
            for a in range(3):
                xp = x.copy()
                xp[i, a] += h
                xm = x.copy()
                xm[i, a] -= h
                fd = ((freq_encode(xp, cfg) - freq_encode(xm, cfg)) * dy).sum() / (2 * h)
                assert dx[i, a] == pytest.approx(fd, rel=1e-5, abs=1e-7)


class TestLevelResolution:
    def test_base_level(self):
        assert level_resolution(HashGridConfig(levels=4, growth=1.5), 0) == 16

    def test_growth_level_two(self):
        assert level_resolution(HashGridConfig(levels=4, growth=1.5), 2) == 36

    def test_non_decreasing(self):
        cfg = HashGridConfig(levels=16, growth=1.447)
        res = [level_resolution(cfg, l) for l in range(cfg.levels)]
        assert all(b >= a for a, b in zip(res, res[1:]))

    def test_table_size_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            HashGridConfig(table_size=1000)


class TestHashIndex:
    def test_origin_cell_is_zero(self):
        cfg = HashGridConfig(table_size=2 ** 14)
        assert hash_index(np.array([0, 0, 0]), 4, cfg) == 0
        assert hash_index(np.array([0, 0, 0]), 4096, cfg) == 0

    def test_dense_row_major(self):
        cfg = HashGridConfig(table_size=2 ** 14)
        assert hash_index(np.array([1, 2, 3]), 4, cfg) == 1 + 2 * 4 + 3 * 16

    @given(st.integers(0, 4095), st.integers(0, 4095), st.integers(0, 4095))
    def test_always_in_range(self, x, y, z):
        cfg = HashGridConfig(table_size=2 ** 10)
        idx = hash_index(np.array([x, y, z]), 4096, cfg)
        assert 0 <= idx < cfg.table_size


def make_table(cfg, seed=0, dtype=np.float64):
    store = ParamStore(dtype)
    table = HashGridTable(cfg, "grid")
    table.register(store, np.random.default_rng(seed))
    return table, store


class TestHashGridEncode:
    def test_zero_table_gives_zero_vector(self):
        cfg = HashGridConfig(levels=3, table_size=2 ** 10, base_resolution=4, growth=1.5)
        table, store = make_table(cfg)
        for sec in store.sections:
            sec.values[...] = 0.0
        y, _ = table.encode(store, np.array([[0.3, 0.7, 0.1]]))
        assert y.shape == (1, cfg.output_width)
        assert np.all(y == 0.0)

    def test_vertex_feature_verbatim(self):
        # base_resolution 17 makes vertex coords k/16 exact in binary
        cfg = HashGridConfig(levels=1, table_size=2 ** 13, base_resolution=17, growth=1.5)
        table, store = make_table(cfg, seed=4)
        res = table.resolutions[0]
        k = np.array([5, 9, 12])
        x = (k / (res - 1))[None, :]
        y, _ = table.encode(store, x)
        expect = store.get("grid.l00").values[int(k[0] + k[1] * res + k[2] * res * res)]
        assert np.array_equal(y[0], expect)

    def test_midpoint_averages_neighbors(self):
        cfg = HashGridConfig(levels=1, table_size=2 ** 13, base_resolution=17, growth=1.5)
        table, store = make_table(cfg, seed=5)
        res = table.resolutions[0]
        k = np.array([4, 8, 2])
        x_lo = k / (res - 1)
        x = x_lo.copy()
        x[0] += 0.5 / (res - 1)  # midpoint of one axis, aligned on the others
        y, _ = table.encode(store, x[None, :])
        tab = store.get("grid.l00").values
        a = tab[int(k[0] + k[1] * res + k[2] * res * res)]
        b = tab[int(k[0] + 1 + k[1] * res + k[2] * res * res)]
        assert np.allclose(y[0], 0.5 * (a + b), rtol=1e-12)

    @settings(deadline=None, max_examples=20)
    @given(st.integers(0, 2 ** 31))
    def test_trilinear_weights_sum_to_one(self, seed):
        cfg = HashGridConfig(levels=4, table_size=2 ** 10, base_resolution=5, growth=1.6)
        table, store = make_table(cfg, seed=1)
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, size=(16, 3))
        _, tapes = table.encode(store, x)
        for tape in tapes:
            assert np.allclose(tape.weights.sum(axis=1), 1.0, atol=1e-12)

    def test_continuity_within_voxel(self):
        cfg = HashGridConfig(levels=2, table_size=2 ** 12, base_resolution=8, growth=2.0)
        table, store = make_table(cfg, seed=6)
        x = np.array([[0.41, 0.33, 0.57]])
        eps = 1e-6
        y0, _ = table.encode(store, x)
        y1, _ = table.encode(store, x + eps)
        spread = max(np.abs(s.values).max() for s in store.sections)
        res = max(table.resolutions)
        assert np.abs(y1 - y0).max() <= 10 * eps * res * spread * 8

    def test_boundary_input_saturates(self):
        cfg = HashGridConfig(levels=2, table_size=2 ** 12, base_resolution=8, growth=2.0)
        table, store = make_table(cfg, seed=7)
        y, _ = table.encode(store, np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]))
        assert np.isfinite(y).all()

    def test_backward_scatter_matches_finite_differences(self):
        cfg = HashGridConfig(levels=2, table_size=2 ** 8, base_resolution=4, growth=2.0)
        table, store = make_table(cfg, seed=8)
        rng = np.random.default_rng(8)
        x = rng.uniform(0.05, 0.95, size=(6, 3))
        dy = rng.standard_normal((6, cfg.output_width))

        def loss():
            y, tapes = table.encode(store, x)
            table.backward(store, tapes, dy)
            return float((y * dy).sum())

        assert grad_check(loss, store, h=1e-6) < 1e-6

    def test_backward_position_gradient_matches_fd(self):
        cfg = HashGridConfig(levels=2, table_size=2 ** 8, base_resolution=4, growth=2.0)
        table, store = make_table(cfg, seed=9)
        rng = np.random.default_rng(9)
        x = rng.uniform(0.1, 0.9, size=(4, 3))
        dy = rng.standard_normal((4, cfg.output_width))
        _, tapes = table.encode(store, x)
        dx = table.backward(store, tapes, dy)
        h = 1e-6
        for i in range(4):
            for a in range(3):
                xp = x.copy()
                xp[i, a] += h
                xm = x.copy()
                xm[i, a] -= h
                yp, _ = table.encode(store, xp)
                ym, _ = table.encode(store, xm)
                fd = ((yp - ym) * dy).sum() / (2 * h)
                assert dx[i, a] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_init_range(self):
        cfg = HashGridConfig(levels=2, table_size=2 ** 10, base_resolution=4, growth=2.0)
        _, store = make_table(cfg, seed=10)
        for sec in store.sections:
            assert np.abs(sec.values).max() <= 1e-4


class TestKernelAgreesWithHashIndex:
    def test_hashed_regime_indices_match(self):
        # tiny table forces the xor-of-primes path at every level
        cfg = HashGridConfig(levels=2, table_size=2 ** 6, base_resolution=9, growth=2.0)
        table, store = make_table(cfg, seed=3)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, size=(64, 3))
        _, tapes = table.encode(store, x)
        from wildsynth.encoding import _CORNERS, level_resolution

        for l, tape in enumerate(tapes):
            res = level_resolution(cfg, l)
            s = x * (res - 1)
            c0 = np.clip(np.floor(s).astype(np.int64), 0, res - 2)
            corners = c0[:, None, :] + _CORNERS[None, :, :]
            expect = hash_index(corners, res, cfg)
            assert np.array_equal(tape.idx, expect)

    def test_dense_regime_indices_match(self):
        cfg = HashGridConfig(levels=1, table_size=2 ** 12, base_resolution=9, growth=2.0)
        table, store = make_table(cfg, seed=3)
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, size=(64, 3))
        _, tapes = table.encode(store, x)
        from wildsynth.encoding import _CORNERS

        s = x * 8
        c0 = np.clip(np.floor(s).astype(np.int64), 0, 7)
        corners = c0[:, None, :] + _CORNERS[None, :, :]
        assert np.array_equal(tapes[0].idx, hash_index(corners, 9, cfg))
