import math

import numpy as np
import pytest

from fontid import imgproc, word_features
from fontid.errors import NoStrokesError, ParameterError
from fontid.word_features import (
    FEATURE_NAMES,
    ZERNIKE_ORDERS,
    extract_word_features,
    slant_line_density,
    stroke_width_stats,
    zernike_features,
)

from conftest import diagonal_step, filled_disk, vertical_bars


def brute_force_band_widths(img):
    """Independent run-length oracle over the 41-row scan band."""
    h = img.shape[0]
    mid = h // 2
    rows = range(mid - 20, mid + 21)
    per_row = []
    for r in rows:
        widths, run = [], 0
        for v in img[r]:
            if v:
                run += 1
            elif run:
                widths.append(run)
                run = 0
        if run:
            widths.append(run)
        per_row.append(widths)
    cmax = max(len(w) for w in per_row)
    pooled = [w for row in per_row if len(row) == cmax for w in row]
    return pooled, cmax


class TestStrokeWidth:
    def test_three_bars_oracle(self):
        img = vertical_bars(height=50, n_bars=3, bar_width=6)
        pooled, cmax = brute_force_band_widths(img)
        assert cmax == 3 and set(pooled) == {6}
        stats = stroke_width_stats(img)
        assert stats.trimmed_mean == 6.0
        assert stats.iqr == 0.0

    def test_trimming_fixture(self):
        # a single C_max row carrying widths {5 x9, 50}: one value trimmed
        # per tail leaves eight 5s
        img = np.zeros((41, 120), dtype=np.uint8)
        x = 0
        for w in [5] * 9 + [50]:
            img[20, x : x + w] = 1
            x += w + 2
        stats = stroke_width_stats(img)
        assert stats.trimmed_mean == 5.0
        assert stats.iqr == 0.0

    def test_blank_band_raises(self):
        img = np.zeros((50, 40), dtype=np.uint8)
        img[:3, :] = 1  # ink exists, but outside the 41-row band
        with pytest.raises(NoStrokesError):
            stroke_width_stats(img)

    def test_translation_invariance(self):
        img = vertical_bars(height=60, n_bars=2, bar_width=4)
        shifted = np.hstack([np.zeros((60, 17), dtype=np.uint8), img])
        assert stroke_width_stats(img) == stroke_width_stats(shifted)

    def test_random_images_match_oracle(self, rng):
        for _ in range(10):
            img = (rng.random((45, 80)) < 0.3).astype(np.uint8)
            pooled, _ = brute_force_band_widths(img)
            if not pooled:
                continue
            stats = stroke_width_stats(img)
            v = np.sort(np.asarray(pooled, dtype=float))
            k = int(np.floor(0.1 * v.size))
            expected_mean = v[k : v.size - k].mean()
            q1, q3 = np.percentile(v, [25, 75])
            assert stats.trimmed_mean == pytest.approx(expected_mean)
            assert stats.iqr == pytest.approx(q3 - q1)

    def test_short_image_rejected(self):
        with pytest.raises(ParameterError):
            stroke_width_stats(np.ones((30, 30), dtype=np.uint8))


class TestSlantDensity:
    def test_single_diagonal_step(self):
        img = diagonal_step(120, direction=1)
        assert slant_line_density(img, 1) == 1.0

    def test_grid_has_no_slant(self):
        img = np.full((120, 120), 255, dtype=np.uint8)
        for r in range(10, 120, 30):
            img[r : r + 3, :] = 0
        for c in range(10, 120, 30):
            img[:, c : c + 3] = 0
        assert slant_line_density(img, 4) == 0.0

    def test_three_slanted_edges_three_chars(self):
        # three disjoint corner triangles: two +45 step edges, one -45.
        # The vote threshold is sized between each stroke's main Hough peak
        # and its +-1 degree side ripples.
        size = 200
        img = np.full((size, size), 255, dtype=np.uint8)
        rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        img[rr - cc > 90] = 10
        img[cc - rr > 90] = 10
        img[rr + cc > 308] = 10
        assert slant_line_density(img, 3, vote_threshold=100) == 1.0

    def test_density_halves_with_double_chars(self):
        img = diagonal_step(120, direction=1)
        d1 = slant_line_density(img, 1)
        d2 = slant_line_density(img, 2)
        assert d2 == pytest.approx(d1 / 2)

    def test_zero_chars_rejected(self):
        with pytest.raises(ParameterError):
            slant_line_density(diagonal_step(60), 0)


class TestZernike:
    def test_order_table(self):
        assert len(ZERNIKE_ORDERS) == 15
        assert ZERNIKE_ORDERS[0] == (1, 1)
        assert ZERNIKE_ORDERS[-1] == (6, 6)
        assert all((n - m) % 2 == 0 and 0 <= m <= n for n, m in ZERNIKE_ORDERS)

    def test_blank_image_is_zeros(self):
        np.testing.assert_array_equal(
            zernike_features(np.zeros((50, 70), dtype=np.uint8)), np.zeros(15)
        )

    def test_disk_odd_orders_vanish(self):
        zm = zernike_features(filled_disk(64, 0.8))
        by_name = dict(zip(FEATURE_NAMES[3:], zm))
        scale = by_name["zm_2_0"]
        assert by_name["zm_1_1"] <= 1e-6 * scale
        assert by_name["zm_3_1"] <= 1e-6 * scale

    def test_rotation_invariance_90(self, rng):
        for _ in range(20):
            glyph = (rng.random((64, 64)) < 0.35).astype(np.uint8)
            base = zernike_features(glyph)
            for k in (1, 2, 3):
                rotated = zernike_features(np.rot90(glyph, k))
                np.testing.assert_allclose(rotated, base, atol=1e-9)

    def test_scale_normalized_disks(self):
        # solid disks fill their crop; after fixed-size resampling the
        # non-vanishing (m = 0) magnitudes agree across source resolutions
        # within 5%, and the symmetry-suppressed ones stay negligible
        a = zernike_features(filled_disk(80, 0.95))
        b = zernike_features(filled_disk(160, 0.95))
        m_zero = np.array([m == 0 for _, m in ZERNIKE_ORDERS])
        assert np.all(np.abs(a[m_zero] - b[m_zero]) <= 0.05 * np.abs(a[m_zero]))
        assert np.all(a[~m_zero] <= 0.06 * a.max())
        assert np.all(b[~m_zero] <= 0.06 * b.max())

    def test_eq_one_against_direct_sum(self):
        # independent direct evaluation of the moment sum on the 64x64 grid
        glyph = filled_disk(64, 0.5)
        n_grid = 64
        idx = np.arange(n_grid)
        x = (2 * idx + 1 - n_grid) / n_grid
        y = (n_grid - 1 - 2 * idx) / n_grid
        xx, yy = np.meshgrid(x, y)
        rho = np.hypot(xx, yy)
        phi = np.arctan2(yy, xx)
        inside = rho <= 1.0
        expected = []
        for n, m in ZERNIKE_ORDERS:
            r = np.zeros_like(rho)
            for s in range((n - m) // 2 + 1):
                num = (-1) ** s * math.factorial(n - s)
                den = (
                    math.factorial(s)
                    * math.factorial((n + m) // 2 - s)
                    * math.factorial((n - m) // 2 - s)
                )
                r += num / den * rho ** (n - 2 * s)
            v_conj = r * np.exp(-1j * m * phi)
            z = (n + 1) / np.pi * np.sum(glyph[inside] * v_conj[inside])
            expected.append(abs(z))
        np.testing.assert_allclose(zernike_features(glyph), expected, atol=1e-9)


class TestExtractWordFeatures:
    def make_word(self):
        img = np.full((400, 300), 240, dtype=np.uint8)
        img[:, 40:80] = 15
        img[:, 140:180] = 15
        img[:, 220:260] = 15
        return img

    def test_vector_shape_and_order(self):
        vec = extract_word_features(self.make_word(), 3)
        assert vec.shape == (18,)
        assert len(FEATURE_NAMES) == 18

    def test_blank_word_raises(self):
        with pytest.raises(NoStrokesError):
            extract_word_features(np.full((400, 100), 255, dtype=np.uint8), 2)

    def test_matches_per_feature_recomputation(self):
        word = self.make_word()
        vec = extract_word_features(word, 3)
        ink = imgproc.binarize(word)
        stats = stroke_width_stats(ink)
        assert vec[0] == stats.trimmed_mean == 40.0
        assert vec[1] == stats.iqr
        assert vec[2] == slant_line_density(word, 3)
        np.testing.assert_array_equal(vec[3:], zernike_features(ink))

    def test_deterministic(self):
        word = self.make_word()
        a = extract_word_features(word, 3)
        b = extract_word_features(word.copy(), 3)
        np.testing.assert_array_equal(a, b)
