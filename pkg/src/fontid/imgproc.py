"""Low-level vision primitives for word-image preprocessing.

Grayscale images are 2-D uint8 arrays (row-major, values 0..255).
Binary images are 2-D uint8 arrays with values in {0, 1}, where 1 marks
foreground ink (dark source pixels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidImageError, ParameterError

DESKEW_RANGE_DEG = 15.0
DESKEW_STEP_DEG = 0.25
CANNY_SIGMA = 1.4
CANNY_KERNEL_SIZE = 5


@dataclass(frozen=True)
class DetectedLine:
    """A straight line in Hough normal form: rho = x*cos(theta) + y*sin(theta).

    theta is the normal angle in degrees within [0, 180); rho is the signed
    distance from the origin (top-left pixel) in pixels.
    """

    rho: float
    theta: float
    votes: int


def _require_gray(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidImageError(f"expected nonempty 2-D grayscale image, got shape {arr.shape}")
    return arr


def normalize_height(img: np.ndarray, target_height: int = 400) -> np.ndarray:
    """Rescale to the target height, preserving aspect ratio (bilinear)."""
    arr = _require_gray(img)
    if target_height < 1:
        raise ParameterError(f"target_height must be >= 1, got {target_height}")
    h, w = arr.shape
    out_h = int(target_height)
    out_w = max(1, round(w * target_height / h))
    return _bilinear_resize(arr, out_h, out_w)


def _bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape
    if (out_h, out_w) == (h, w):
        return arr.copy()
    # Center-aligned sampling: output pixel centers map onto input pixel centers.
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = arr.astype(np.float64)
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def median_filter(img: np.ndarray, window: int = 3) -> np.ndarray:
    """Median-filter salt-and-pepper noise; borders are edge-replicated."""
    arr = _require_gray(img)
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 1, got {window}")
    return ndimage.median_filter(arr, size=window, mode="nearest").astype(np.uint8)


def _modal_border_intensity(arr: np.ndarray) -> int:
    h, w = arr.shape
    if h <= 2 or w <= 2:
        border = arr.ravel()
    else:
        border = np.concatenate([arr[0, :], arr[-1, :], arr[1:-1, 0], arr[1:-1, -1]])
    return int(np.bincount(border, minlength=256).argmax())


def rotate_image(img: np.ndarray, angle_deg: float, pad_value: int | None = None) -> np.ndarray:
    """Rotate about the image center (bilinear), keeping the original frame.

    Regions swung in from outside are filled with pad_value, defaulting to
    the modal intensity of the 1-px border (the likeliest background).
    """
    arr = _require_gray(img)
    if pad_value is None:
        pad_value = _modal_border_intensity(arr)
    if angle_deg == 0.0:
        return arr.copy()
    h, w = arr.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rad = np.deg2rad(angle_deg)
    cos_a, sin_a = np.cos(rad), np.sin(rad)
    rr, cc = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # Inverse map: sample the source at the output grid rotated by -angle.
    src_x = cos_a * cc + sin_a * rr + cx
    src_y = -sin_a * cc + cos_a * rr + cy
    inside = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    sx = np.clip(src_x, 0, w - 1)
    sy = np.clip(src_y, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    a = arr.astype(np.float64)
    val = (
        a[y0, x0] * (1 - fx) * (1 - fy)
        + a[y0, x1] * fx * (1 - fy)
        + a[y1, x0] * (1 - fx) * fy
        + a[y1, x1] * fx * fy
    )
    out = np.where(inside, val, float(pad_value))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def deskew(img: np.ndarray) -> tuple[np.ndarray, float]:
    """Straighten text lines; returns (rotated image, applied angle in degrees).

    Searches rotations in [-15, +15] degrees at 0.25-degree steps and keeps
    the angle that maximizes the variance of the horizontal projection
    profile of the binarized image. Ties resolve toward angle 0. Blank
    images come back unrotated with angle 0.
    """
    arr = _require_gray(img)
    ink = binarize(arr)
    ys, xs = np.nonzero(ink)
    if ys.size == 0:
        return arr.copy(), 0.0
    h, w = arr.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ry = ys - cy
    rx = xs - cx
    steps = int(round(2 * DESKEW_RANGE_DEG / DESKEW_STEP_DEG)) + 1
    angles = np.linspace(-DESKEW_RANGE_DEG, DESKEW_RANGE_DEG, steps)
    # Visit 0 first, then outward, so "strictly greater" keeps ties at 0.
    order = np.lexsort((angles, np.abs(angles)))
    best_angle = 0.0
    best_var = -1.0
    for a in angles[order]:
        rad = np.deg2rad(a)
        rows = np.rint(np.sin(rad) * rx + np.cos(rad) * ry).astype(int)
        rows -= rows.min()
        profile = np.bincount(rows)
        var = float(np.var(profile))
        if var > best_var:
            best_var = var
            best_angle = float(a)
    return rotate_image(arr, best_angle), best_angle


def otsu_threshold(img: np.ndarray) -> int:
    """Otsu global threshold T: pixels strictly below T are foreground ink."""
    arr = _require_gray(img)
    hist = np.bincount(arr.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b = np.nan_to_num(sigma_b, nan=0.0, posinf=0.0)
    return int(np.argmax(sigma_b)) + 1


def binarize(img: np.ndarray) -> np.ndarray:
    """Binarize with Otsu's threshold; 1 = ink. Constant images become all 0."""
    arr = _require_gray(img)
    if arr.min() == arr.max():
        return np.zeros_like(arr, dtype=np.uint8)
    t = otsu_threshold(arr)
    return (arr < t).astype(np.uint8)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)


def canny_edges(img: np.ndarray, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Canny edge detection; low/high are fractions of the max gradient magnitude.

    Gaussian smoothing (5x5, sigma 1.4), Sobel gradients, non-maximum
    suppression along the quantized gradient direction, then hysteresis:
    weak pixels survive only when 8-connected to a strong pixel.
    """
    arr = _require_gray(img)
    if not (0.0 < low < high <= 1.0):
        raise ParameterError(f"thresholds must satisfy 0 < low < high <= 1, got {low}, {high}")
    smooth = ndimage.correlate(
        arr.astype(np.float64), _gaussian_kernel(CANNY_KERNEL_SIZE, CANNY_SIGMA), mode="nearest"
    )
    gx = ndimage.correlate(smooth, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(smooth, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    max_mag = mag.max()
    if max_mag == 0.0:
        return np.zeros_like(arr, dtype=np.uint8)

    # Non-maximum suppression: keep pixels at least as large as both
    # neighbors along the gradient direction, quantized to 4 sectors.
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.zeros(arr.shape, dtype=np.uint8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    padded = np.pad(mag, 1, mode="constant")
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros(arr.shape, dtype=bool)
    h, w = arr.shape
    for s, (dr, dc) in offsets.items():
        fwd = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        bwd = padded[1 - dr : 1 - dr + h, 1 - dc : 1 - dc + w]
        mask = sector == s
        keep |= mask & (mag >= fwd) & (mag >= bwd)
    keep &= mag > 0

    strong = keep & (mag >= high * max_mag)
    weak = keep & (mag >= low * max_mag)
    if not strong.any():
        return np.zeros_like(arr, dtype=np.uint8)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    kept_labels = np.unique(labels[strong])
    edges = weak & np.isin(labels, kept_labels)
    return edges.astype(np.uint8)


def hough_lines(edges: np.ndarray, vote_threshold: int) -> list[DetectedLine]:
    """Detect straight lines in a binary edge image via the Hough transform.

    Accumulates over theta in {0, 1, ..., 179} degrees at 1-px rho
    resolution, then reports 3x3 local maxima in accumulator space with at
    least vote_threshold votes, sorted by votes descending. On plateaus the
    first cell in scan order wins, so duplicate detections of one line are
    suppressed deterministically.
    """
    arr = _require_gray(edges)
    if vote_threshold < 1:
        raise ParameterError(f"vote_threshold must be >= 1, got {vote_threshold}")
    ys, xs = np.nonzero(arr)
    if ys.size == 0:
        return []
    h, w = arr.shape
    diag = int(np.ceil(np.hypot(h, w)))
    thetas = np.deg2rad(np.arange(180))
    cos_t = np.cos(thetas)
    sin_t = np.sin(thetas)
    rho = np.rint(xs[:, None] * cos_t[None, :] + ys[:, None] * sin_t[None, :]).astype(int)
    acc = np.zeros((2 * diag + 1, 180), dtype=np.int64)
    flat = (rho + diag) * 180 + np.arange(180)[None, :]
    np.add.at(acc.ravel(), flat.ravel(), 1)

    padded = np.pad(acc, 1, mode="constant")
    is_max = acc >= vote_threshold
    before = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
    after = [(0, 1), (1, -1), (1, 0), (1, 1)]
    ar, ac = acc.shape
    for dr, dc in before:
        is_max &= acc > padded[1 + dr : 1 + dr + ar, 1 + dc : 1 + dc + ac]
    for dr, dc in after:
        is_max &= acc >= padded[1 + dr : 1 + dr + ar, 1 + dc : 1 + dc + ac]

    ridx, tidx = np.nonzero(is_max)
    votes = acc[ridx, tidx]
    order = np.lexsort((tidx, ridx, -votes))
    return [
        DetectedLine(rho=float(ridx[i] - diag), theta=float(tidx[i]), votes=int(votes[i]))
        for i in order
    ]
