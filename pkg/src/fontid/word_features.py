"""The 18 per-word features: stroke-width stats, slant density, Zernike magnitudes.

Feature order is fixed: trimmed-mean stroke width, IQR stroke width, slant
line density, then the 15 Zernike magnitudes in lexicographic (n, m) order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import imgproc
from .errors import NoStrokesError, ParameterError

STROKE_BAND_ROWS = 41
TRIM_FRACTION = 0.10
ZERNIKE_GRID = 64
ZERNIKE_MAX_ORDER = 6
# Normal-form angles (degrees) whose line slope falls in 45 +- 5 or -45 -+ 5.
SLANT_THETA_RANGES = ((40.0, 50.0), (130.0, 140.0))

ZERNIKE_ORDERS: tuple[tuple[int, int], ...] = tuple(
    (n, m) for n in range(1, ZERNIKE_MAX_ORDER + 1) for m in range(n % 2, n + 1, 2)
)

FEATURE_NAMES: tuple[str, ...] = (
    "stroke_trimmed_mean",
    "stroke_iqr",
    "slant_line_density",
    *[f"zm_{n}_{m}" for n, m in ZERNIKE_ORDERS],
)

N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class StrokeStats:
    trimmed_mean: float
    iqr: float


def preprocess_word(
    img: np.ndarray, target_height: int = 400, median_window: int = 3
) -> np.ndarray:
    """Standard word-image chain: height-normalize, despeckle, deskew."""
    out = imgproc.normalize_height(img, target_height)
    out = imgproc.median_filter(out, median_window)
    out, _ = imgproc.deskew(out)
    return out


def _row_run_lengths(row: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([0], row, [0]))
    d = np.diff(padded)
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0]
    return ends - starts


def trimmed_mean(values: np.ndarray, trim_fraction: float = TRIM_FRACTION) -> float:
    """Mean after dropping floor(trim_fraction * n) values from each tail."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    k = int(math.floor(trim_fraction * v.size))
    return float(np.mean(v[k : v.size - k]))


def stroke_width_stats(img: np.ndarray) -> StrokeStats:
    """Robust stroke-width statistics from the 41 rows around the image middle.

    Each band row contributes its horizontal ink run lengths; only rows with
    the maximal run count participate, which suppresses rows that clip
    ascenders/descenders. Returns the 10%-per-tail trimmed mean and the
    linearly interpolated IQR of the pooled widths.
    """
    arr = np.asarray(img)
    h = arr.shape[0]
    if h < STROKE_BAND_ROWS:
        raise ParameterError(f"image height must be >= {STROKE_BAND_ROWS}, got {h}")
    mid = h // 2
    half = STROKE_BAND_ROWS // 2
    band = arr[mid - half : mid + half + 1]
    runs_per_row = [_row_run_lengths(band[r]) for r in range(band.shape[0])]
    counts = np.array([r.size for r in runs_per_row])
    c_max = counts.max()
    if c_max == 0:
        raise NoStrokesError("no foreground ink in the stroke scan band")
    pooled = np.concatenate([r for r, c in zip(runs_per_row, counts) if c == c_max])
    pooled = pooled.astype(np.float64)
    q1, q3 = np.percentile(pooled, [25.0, 75.0], method="linear")
    return StrokeStats(trimmed_mean=trimmed_mean(pooled), iqr=float(q3 - q1))


def default_vote_threshold(image_height: int) -> int:
    return max(10, int(round(0.4 * image_height)))


def slant_line_density(
    word: np.ndarray,
    char_count: int,
    *,
    canny_low: float = 0.1,
    canny_high: float = 0.2,
    vote_threshold: int | None = None,
) -> float:
    """Count detected lines slanted near +-45 degrees, per recognized character."""
    if char_count < 1:
        raise ParameterError(f"char_count must be >= 1, got {char_count}")
    edges = imgproc.canny_edges(word, canny_low, canny_high)
    if vote_threshold is None:
        vote_threshold = default_vote_threshold(word.shape[0])
    lines = imgproc.hough_lines(edges, vote_threshold)
    n_slanted = sum(
        1 for ln in lines if any(lo <= ln.theta <= hi for lo, hi in SLANT_THETA_RANGES)
    )
    return n_slanted / char_count


def _radial_polynomial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        coeff = (
            (-1) ** s
            * math.factorial(n - s)
            / (
                math.factorial(s)
                * math.factorial((n + m) // 2 - s)
                * math.factorial((n - m) // 2 - s)
            )
        )
        out += coeff * rho ** (n - 2 * s)
    return out


@lru_cache(maxsize=4)
def _zernike_basis(grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate Zernike polynomials sampled at unit-disk pixel centers.

    Returns (disk mask over the grid, basis array of shape (15, n_disk_pixels)).
    """
    idx = np.arange(grid)
    x = (2 * idx + 1 - grid) / grid
    y = (grid - 1 - 2 * idx) / grid
    xx, yy = np.meshgrid(x, y)
    rho = np.hypot(xx, yy)
    mask = rho <= 1.0
    phi = np.arctan2(yy[mask], xx[mask])
    rho_in = rho[mask]
    basis = np.empty((len(ZERNIKE_ORDERS), rho_in.size), dtype=np.complex128)
    for i, (n, m) in enumerate(ZERNIKE_ORDERS):
        basis[i] = (n + 1) / np.pi * _radial_polynomial(n, m, rho_in) * np.exp(-1j * m * phi)
    return mask, basis


def _nearest_resample(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    rows = np.minimum((np.arange(size) + 0.5) * h / size, h - 1).astype(int)
    cols = np.minimum((np.arange(size) + 0.5) * w / size, w - 1).astype(int)
    return img[np.ix_(rows, cols)]


def zernike_features(img: np.ndarray) -> np.ndarray:
    """Magnitudes of the 15 Zernike moments with radial order 1..6.

    The binary mask is resampled to a fixed 64x64 square (nearest neighbor)
    and pixel centers are mapped onto the unit disk; pixels outside the disk
    are excluded. An all-background image yields 15 zeros.
    """
    arr = np.asarray(img)
    resized = _nearest_resample(arr, ZERNIKE_GRID)
    mask, basis = _zernike_basis(ZERNIKE_GRID)
    values = resized[mask].astype(np.float64)
    if not values.any():
        return np.zeros(len(ZERNIKE_ORDERS))
    return np.abs(basis @ values)


def extract_word_features(word: np.ndarray, char_count: int) -> np.ndarray:
    """Full 18-feature vector for a preprocessed word image.

    Binarizes once, then computes stroke statistics and Zernike moments on
    the ink mask and slant density on the grayscale image. Raises
    NoStrokesError for words with no ink in the scan band; callers drop
    those words from the page histogram.
    """
    ink = imgproc.binarize(word)
    stats = stroke_width_stats(ink)
    slant = slant_line_density(word, char_count)
    zm = zernike_features(ink)
    return np.concatenate(([stats.trimmed_mean, stats.iqr, slant], zm))
