"""Synthetic piecewise-smooth phantoms and bit-exact image file I/O.

The phantoms are built from additive ellipses (the classic head phantom) plus
randomized ellipse/convex-polygon layouts.  Sharp region boundaries matter:
the demotion loss rides on the L1 sparsity of exactly this kind of image.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError

# Modified Shepp-Logan ellipse table: intensity, semi-axis a (x), semi-axis b (y),
# center x0, y0, rotation phi in degrees.  Coordinates live in [-1, 1]^2.
SHEPP_LOGAN_ELLIPSES = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def _grid(size):
    ax = (np.arange(size) - (size - 1) / 2.0) / ((size - 1) / 2.0)
    return np.meshgrid(ax, ax, indexing="xy")


def _add_ellipse(img, xx, yy, intensity, a, b, x0, y0, phi_deg):
    phi = np.deg2rad(phi_deg)
    c, s = np.cos(phi), np.sin(phi)
    xr = (xx - x0) * c + (yy - y0) * s
    yr = -(xx - x0) * s + (yy - y0) * c
    img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += intensity


def shepp_logan(size: int) -> np.ndarray:
    """Modified Shepp-Logan head phantom, max intensity 1.0, background 0.0."""
    if size < 8:
        raise ContractViolationError(f"phantom size must be >= 8, got {size}")
    xx, yy = _grid(size)
    img = np.zeros((size, size))
    for intensity, a, b, x0, y0, phi in SHEPP_LOGAN_ELLIPSES:
        _add_ellipse(img, xx, yy, intensity, a, b, x0, y0, phi)
    # overlapping intensities cancel to ~-1e-16 in spots; the map is non-negative
    np.clip(img, 0.0, None, out=img)
    return img


def _add_convex_polygon(img, xx, yy, pts, intensity):
    # pts are vertices ordered by angle; inside = same cross-product sign on all edges
    inside = np.ones_like(img, dtype=bool)
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
        inside &= cross >= 0
    img[inside] += intensity


def random_phantom(size: int, rng: np.random.Generator) -> np.ndarray:
    """Randomized piecewise-constant phantom: skull ellipse, blobs, polygons."""
    if size < 8:
        raise ContractViolationError(f"phantom size must be >= 8, got {size}")
    xx, yy = _grid(size)
    img = np.zeros((size, size))

    # enclosing "skull" ellipse
    a = rng.uniform(0.72, 0.92)
    b = rng.uniform(0.72, 0.92)
    phi = rng.uniform(0.0, 180.0)
    _add_ellipse(img, xx, yy, rng.uniform(0.6, 1.0), a, b, 0.0, 0.0, phi)

    for _ in range(int(rng.integers(3, 8))):
        _add_ellipse(
            img, xx, yy,
            intensity=rng.uniform(-0.4, 0.5),
            a=rng.uniform(0.06, 0.38),
            b=rng.uniform(0.06, 0.38),
            x0=rng.uniform(-0.45, 0.45),
            y0=rng.uniform(-0.45, 0.45),
            phi_deg=rng.uniform(0.0, 180.0),
        )

    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(-0.4, 0.4, size=2)
        radius = rng.uniform(0.1, 0.3)
        k = int(rng.integers(3, 7))
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=k))
        pts = [(cx + radius * np.cos(t), cy + radius * np.sin(t)) for t in angles]
        _add_convex_polygon(img, xx, yy, pts, rng.uniform(-0.25, 0.35))

    img = np.clip(img, 0.0, None)
    peak = img.max()
    if peak > 0:
        img /= peak
    return img


# ---------------------------------------------------------------------------
# File formats: raw little-endian float32 and 16-bit binary PGM
# ---------------------------------------------------------------------------

def save_f32(path, img: np.ndarray) -> None:
    np.asarray(img, dtype="<f4").tofile(path)


def load_f32(path, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != height * width:
        raise ContractViolationError(
            f"{path}: has {data.size} float32 values, expected {height}x{width}")
    return data.reshape(height, width).astype(np.float64)


def save_pgm16(path, img: np.ndarray) -> None:
    """Write a [0,1] image as binary 16-bit PGM (big-endian sample order)."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    raw = np.round(img * 65535.0).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(raw.tobytes())


def load_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ContractViolationError(f"{path}: not a binary PGM file")
        line = fh.readline()
        while line.startswith(b"#"):
            line = fh.readline()
        w, h = (int(v) for v in line.split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ContractViolationError(f"{path}: expected 16-bit PGM, maxval {maxval}")
        raw = np.frombuffer(fh.read(), dtype=">u2")
    if raw.size != h * w:
        raise ContractViolationError(f"{path}: truncated PGM payload")
    return raw.reshape(h, w).astype(np.float64) / 65535.0
