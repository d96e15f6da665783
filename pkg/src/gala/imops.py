"""Low-level image operations shared across the pipeline.

These are deliberately hand-rolled on numpy/scipy so interpolation and border
semantics are exact and stable: an identity warp is pixel-exact, bilinear
resize uses half-pixel centers, and out-of-bounds samples blend toward an
explicit fill value.
"""

from __future__ import annotations

import numpy as np
from PIL import Image
from scipy import ndimage

WHITE = 1.0


def load_image(path) -> np.ndarray:
    """Load a PNG/JPEG as float32 RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path, data: np.ndarray) -> None:
    """Save float RGB in [0, 1] as an 8-bit image (format from the extension)."""
    arr = np.clip(np.asarray(data, dtype=np.float32), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    """Load a grayscale mask image as uint8 {0, 1} (threshold at 128)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) != 0).astype(np.uint8) * 255).save(path)


def encode_png(data: np.ndarray) -> bytes:
    """Encode float RGB (H, W, 3) or grayscale (H, W) in [0, 1] as PNG bytes."""
    import io

    arr = np.clip(np.asarray(data, dtype=np.float32), 0.0, 1.0)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_image_bytes(blob: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes to float32 RGB in [0, 1]."""
    import io

    with Image.open(io.BytesIO(blob)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def to_luminance(image: np.ndarray) -> np.ndarray:
    """RGB -> single-channel luma (ITU-R 601 weights)."""
    image = np.asarray(image, dtype=np.float32)
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel sample centers.

    Same-size calls return an exact copy. Works on (H, W) and (H, W, C) arrays.
    """
    image = np.asarray(image, dtype=np.float32)
    in_h, in_w = image.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return image.copy()

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0).astype(np.float32)[:, None]
    wx = (xs - x0).astype(np.float32)[None, :]
    if image.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(np.float32)


def _interp_axis(values: np.ndarray, anchors: np.ndarray, out_len: int) -> np.ndarray:
    """Piecewise-linear interpolation along axis 0 with node rows pinned at
    integer anchor positions (anchors strictly increasing, first 0, last out_len-1)."""
    positions = np.arange(out_len)
    seg = np.clip(np.searchsorted(anchors, positions, side="right") - 1, 0, len(anchors) - 2)
    a0 = anchors[seg]
    a1 = anchors[seg + 1]
    w = ((positions - a0) / np.maximum(a1 - a0, 1))[:, None]
    return values[seg] * (1 - w) + values[seg + 1] * w


def upsample_align_corners(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Upsample a small grid to (out_h, out_w) with every grid node pinned to an
    exact output pixel: corners anchor at the image corners and each node value
    appears verbatim at its anchor, so the output attains the grid's min and max."""
    grid = np.asarray(grid, dtype=np.float64)
    gh, gw = grid.shape
    if out_h < gh or out_w < gw:
        raise ValueError("upsample target must be at least the grid size")
    if gh == 1 and gw == 1:
        return np.full((out_h, out_w), grid[0, 0])
    anchors_y = np.round(np.linspace(0, out_h - 1, gh)).astype(np.intp)
    anchors_x = np.round(np.linspace(0, out_w - 1, gw)).astype(np.intp)
    rows = _interp_axis(grid.T, anchors_x, out_w).T  # (gh, out_w)
    return _interp_axis(rows, anchors_y, out_h)


def gaussian_blur(image: np.ndarray, radius: float) -> np.ndarray:
    """Two-pass separable Gaussian blur with sigma = radius / 3, truncated at 3 sigma."""
    if radius <= 0:
        return np.asarray(image, dtype=np.float32).copy()
    sigma = radius / 3.0
    out = ndimage.gaussian_filter1d(np.asarray(image, dtype=np.float32), sigma, axis=0, truncate=3.0, mode="nearest")
    out = ndimage.gaussian_filter1d(out, sigma, axis=1, truncate=3.0, mode="nearest")
    return out


def homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Solve the 3x3 homography mapping 4 src points to 4 dst points (DLT).

    Raises ValueError("degenerate homography") when the system is singular or
    the resulting matrix is not invertible.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly 4 source and 4 destination points")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise ValueError("degenerate homography") from None
    matrix = np.append(h, 1.0).reshape(3, 3)
    if abs(np.linalg.det(matrix)) < 1e-9:
        raise ValueError("degenerate homography")
    return matrix


def warp_homography(image: np.ndarray, matrix: np.ndarray, fill: float) -> np.ndarray:
    """Warp an image by a forward homography (src point -> dst point).

    Output pixel centers are pulled back through the inverse map and sampled
    bilinearly; samples outside the source blend toward ``fill``. An identity
    matrix reproduces the input pixel-exactly.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    try:
        inv = np.linalg.inv(np.asarray(matrix, dtype=np.float64))
    except np.linalg.LinAlgError:
        raise ValueError("degenerate homography") from None

    # Destination pixel centers in (x, y), pulled back to source coordinates.
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64) + 0.5, np.arange(h, dtype=np.float64) + 0.5)
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
        sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom
    sx = np.nan_to_num(sx, nan=-1e9)
    sy = np.nan_to_num(sy, nan=-1e9)
    coords = [sy - 0.5, sx - 0.5]

    if image.ndim == 2:
        return ndimage.map_coordinates(image, coords, order=1, mode="grid-constant", cval=fill).astype(np.float32)
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.map_coordinates(image[..., c], coords, order=1, mode="grid-constant", cval=fill)
    return out


def disk_footprint(radius: int) -> np.ndarray:
    """Binary disk of the given integer radius (x^2 + y^2 <= r^2)."""
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= r * r


def erode_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erode a binary mask by a disk; radius 0 is the identity."""
    mask = np.asarray(mask) != 0
    if radius <= 0:
        return mask.astype(np.uint8)
    return ndimage.binary_erosion(mask, structure=disk_footprint(radius)).astype(np.uint8)


def rasterize_polygon(points, height: int, width: int) -> np.ndarray:
    """Rasterize a polygon to a binary mask with even-odd (parity) fill.

    ``points`` is a sequence of (x, y) vertices. A pixel is inside when its
    center crosses the polygon boundary an odd number of times.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ValueError("polygon needs at least 3 (x, y) points")
    mask = np.zeros((height, width), dtype=np.uint8)
    x0 = pts[:, 0]
    y0 = pts[:, 1]
    x1 = np.roll(x0, -1)
    y1 = np.roll(y0, -1)
    for row in range(height):
        yc = row + 0.5
        crosses = (y0 <= yc) != (y1 <= yc)
        if not crosses.any():
            continue
        t = (yc - y0[crosses]) / (y1[crosses] - y0[crosses])
        xints = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
        for lo, hi in zip(xints[0::2], xints[1::2]):
            start = int(np.ceil(lo - 0.5))
            stop = int(np.floor(hi - 0.5))
            if stop >= start:
                mask[row, max(start, 0) : min(stop, width - 1) + 1] = 1
    return mask
