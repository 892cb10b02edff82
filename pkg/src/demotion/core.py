"""Complex image type, centered FFT pair, and Kaiser-Bessel spectrum resampling.

k-space follows the MRI convention: the DC term sits at index (H//2, W//2),
and both transforms are orthonormal so energy is preserved.  The resampler
evaluates a uniform spectrum at arbitrary frequency coordinates by going to
the image domain, correcting for the interpolation kernel's apodization,
zero-padding by the oversampling factor, transforming back, and interpolating
on the oversampled grid with a separable Kaiser-Bessel kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import i0 as _bessel_i0, i1 as _bessel_i1

from .errors import ContractViolationError, CoordinateRangeError

IMAGE = "image"
KSPACE = "kspace"

OVERSAMPLING = 2
KERNEL_WIDTH = 6
# Canonical-grid resampling reproduces the input to this relative L2 error
# with the defaults above.
NUFFT_IDENTITY_TOL = 1e-6

MIN_SIDE = 8


@dataclass
class ComplexImage:
    """H x W complex array tagged with the domain it lives in."""

    data: np.ndarray
    domain: str = IMAGE

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ContractViolationError(f"expected a 2-D array, got shape {data.shape}")
        if data.shape[0] < MIN_SIDE or data.shape[1] < MIN_SIDE:
            raise ContractViolationError(f"minimum size is {MIN_SIDE}x{MIN_SIDE}, got {data.shape}")
        if self.domain not in (IMAGE, KSPACE):
            raise ContractViolationError(f"unknown domain tag {self.domain!r}")
        data = data.astype(np.complex128, copy=False)
        if not np.all(np.isfinite(data.real)) or not np.all(np.isfinite(data.imag)):
            raise ContractViolationError("array contains NaN or Inf")
        self.data = data

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape


def _require_domain(img: ComplexImage, domain: str, op: str) -> None:
    if not isinstance(img, ComplexImage):
        raise ContractViolationError(f"{op} expects a ComplexImage, got {type(img).__name__}")
    if img.domain != domain:
        raise ContractViolationError(f"{op} expects domain {domain!r}, got {img.domain!r}")


# ---------------------------------------------------------------------------
# Centered orthonormal FFT pair
# ---------------------------------------------------------------------------

def fft2c_array(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT on a bare array."""
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


def ifft2c_array(y: np.ndarray) -> np.ndarray:
    """Inverse of fft2c_array."""
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y), norm="ortho"))


def fft2c(img: ComplexImage) -> ComplexImage:
    """Image domain -> k-space, DC at (H//2, W//2), energy preserved."""
    _require_domain(img, IMAGE, "fft2c")
    return ComplexImage(fft2c_array(img.data), KSPACE)


def ifft2c(ksp: ComplexImage) -> ComplexImage:
    """k-space -> image domain; exact inverse of fft2c."""
    _require_domain(ksp, KSPACE, "ifft2c")
    return ComplexImage(ifft2c_array(ksp.data), IMAGE)


# ---------------------------------------------------------------------------
# Sample grids
# ---------------------------------------------------------------------------

@dataclass
class SampleGrid:
    """N x 2 frequency coordinates (ky, kx) in cycles per field of view.

    Rows are ordered row-major to match the k-space layout they resample.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ContractViolationError(f"grid coords must be (N, 2), got {coords.shape}")
        self.coords = coords

    def __len__(self):
        return self.coords.shape[0]


def canonical_grid(h: int, w: int) -> SampleGrid:
    """Integer grid covering [-H/2, H/2) x [-W/2, W/2), row-major."""
    ky = np.arange(h) - h // 2
    kx = np.arange(w) - w // 2
    gy, gx = np.meshgrid(ky, kx, indexing="ij")
    return SampleGrid(np.stack([gy.ravel(), gx.ravel()], axis=1).astype(np.float64))


def rotation_matrix(alpha_deg: float) -> np.ndarray:
    """2x2 rotation applied to (ky, kx) coordinate pairs."""
    a = np.deg2rad(alpha_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, s], [-s, c]])


def rotate_grid(grid: SampleGrid, alpha_deg: float) -> SampleGrid:
    """Rotate every coordinate pair by the same angle."""
    return SampleGrid(grid.coords @ rotation_matrix(alpha_deg).T)


# ---------------------------------------------------------------------------
# Kaiser-Bessel kernel
# ---------------------------------------------------------------------------

def kb_beta(width: int, oversamp: float = OVERSAMPLING) -> float:
    """Standard gridding shape parameter for a given kernel width."""
    return np.pi * np.sqrt((width / oversamp) ** 2 * (oversamp - 0.5) ** 2 - 0.8)


def kb_kernel(x, beta: float):
    """Kernel value on normalized offsets |x| <= 1 (zero outside).

    The I0 window is shifted down by its edge value so the kernel is
    continuous at the support boundary; kb_apodization carries the matching
    correction term.
    """
    x = np.asarray(x, dtype=np.float64)
    s2 = 1.0 - x * x
    inside = s2 > 0.0
    s = np.sqrt(np.where(inside, s2, 0.0))
    return np.where(inside, _bessel_i0(beta * s) - 1.0, 0.0)


def kb_kernel_d1(x, beta: float):
    """First derivative of kb_kernel with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    s2 = 1.0 - x * x
    inside = s2 > 0.0
    s = np.sqrt(np.where(inside, s2, 1.0))
    # d/dx I0(beta*s) = I1(beta*s) * beta * (-x/s); finite limit -beta^2 x / 2 as s -> 0
    small = s2 < 1e-12
    safe = np.where(small, -0.5 * beta * beta * x, -beta * x * _bessel_i1(beta * s) / s)
    return np.where(inside, safe, 0.0)


def kb_kernel_d2(x, beta: float):
    """Second derivative of kb_kernel with respect to x."""
    x = np.asarray(x, dtype=np.float64)
    s2 = 1.0 - x * x
    inside = s2 > 0.0
    s = np.sqrt(np.where(inside, s2, 1.0))
    small = s2 < 1e-8
    b = beta
    with np.errstate(divide="ignore", invalid="ignore"):
        full = (b * b * x * x * _bessel_i0(b * s) / s2
                - b * _bessel_i1(b * s) / s
                - 2.0 * b * x * x * _bessel_i1(b * s) / (s2 * s))
    # series limit at the support edge: b^4 x^2 / 8 - b^2 / 2
    lim = (b ** 4) * x * x / 8.0 - b * b / 2.0
    return np.where(inside, np.where(small, lim, full), 0.0)


def kb_apodization(n: int, width: int, beta: float, oversamp: float = OVERSAMPLING):
    """Image-domain response of the sampled kernel at centered pixel index.

    Dividing the image by this undoes the blur the frequency-domain
    interpolation introduces.  The response is the discrete-time transform of
    the kernel taps as actually sampled on the oversampled grid (not the
    continuous kernel's analytic transform), so resampling at the canonical
    grid is exact up to rounding.
    """
    # tap offsets and weights for a zero-fraction position
    j0 = int(np.ceil(-width / 2.0))
    offs = j0 + np.arange(width)
    wts = kb_kernel(-offs * (2.0 / width), beta)
    idx = np.arange(n) - n // 2
    f = idx / (oversamp * n)
    return np.sum(wts[:, None] * np.cos(2.0 * np.pi * offs[:, None] * f[None, :]), axis=0)


# ---------------------------------------------------------------------------
# Gridded resampling (type-2 NUFFT)
# ---------------------------------------------------------------------------

def kb_tables(u: np.ndarray, n_grid: int, width: int, beta: float, order: int = 0):
    """Neighbor indices and kernel weights along one axis.

    ``u`` holds positions in oversampled-grid cells relative to the grid
    center; indices wrap modulo ``n_grid`` (the spectrum of an integer-indexed
    image is exactly periodic).  ``order`` selects the kernel derivative with
    respect to u (0, 1, or 2).
    """
    u = np.asarray(u, dtype=np.float64)
    j0 = np.ceil(u - width / 2.0)
    offs = j0[..., None] + np.arange(width)
    xn = (u[..., None] - offs) * (2.0 / width)
    if order == 0:
        wts = kb_kernel(xn, beta)
    elif order == 1:
        wts = kb_kernel_d1(xn, beta) * (2.0 / width)
    elif order == 2:
        wts = kb_kernel_d2(xn, beta) * (2.0 / width) ** 2
    else:
        raise ValueError(f"unsupported kernel derivative order {order}")
    idx = (offs.astype(np.int64) + n_grid // 2) % n_grid
    return idx, wts


def oversampled_spectrum(ksp: np.ndarray, width: int = KERNEL_WIDTH,
                         oversamp: int = OVERSAMPLING) -> np.ndarray:
    """Deapodized, zero-padded, oversampled spectrum used by the interpolator."""
    h, w = ksp.shape
    beta = kb_beta(width, oversamp)
    img = ifft2c_array(ksp)
    apod_y = kb_apodization(h, width, beta, oversamp)
    apod_x = kb_apodization(w, width, beta, oversamp)
    img = img / (np.sqrt(h * w) * np.outer(apod_y, apod_x))
    h2, w2 = oversamp * h, oversamp * w
    padded = np.zeros((h2, w2), dtype=np.complex128)
    y0 = h2 // 2 - h // 2
    x0 = w2 // 2 - w // 2
    padded[y0:y0 + h, x0:x0 + w] = img
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(padded)))


def interpolate_spectrum(spec2: np.ndarray, coords: np.ndarray, width: int = KERNEL_WIDTH,
                         oversamp: int = OVERSAMPLING, beta: float | None = None) -> np.ndarray:
    """Evaluate an oversampled spectrum at (ky, kx) coordinates."""
    if beta is None:
        beta = kb_beta(width, oversamp)
    h2, w2 = spec2.shape
    coords = np.asarray(coords, dtype=np.float64)
    iy, wy = kb_tables(oversamp * coords[:, 0], h2, width, beta)
    ix, wx = kb_tables(oversamp * coords[:, 1], w2, width, beta)
    vals = spec2[iy[:, :, None], ix[:, None, :]]
    return np.einsum("na,nb,nab->n", wy, wx, vals)


def resample_spectrum(ksp: np.ndarray, coords: np.ndarray, width: int = KERNEL_WIDTH,
                      oversamp: int = OVERSAMPLING) -> np.ndarray:
    """Evaluate a uniform spectrum at arbitrary coordinates (bare arrays)."""
    h, w = ksp.shape
    coords = np.asarray(coords, dtype=np.float64)
    limit_y, limit_x = oversamp * h / 2.0, oversamp * w / 2.0
    bad_y = np.abs(coords[:, 0]) > limit_y
    bad_x = np.abs(coords[:, 1]) > limit_x
    if np.any(bad_y) or np.any(bad_x):
        k = int(np.argmax(bad_y | bad_x))
        raise CoordinateRangeError(
            f"coordinate {tuple(coords[k])} exceeds the oversampled Nyquist "
            f"limit ({limit_y}, {limit_x})")
    spec2 = oversampled_spectrum(ksp, width, oversamp)
    return interpolate_spectrum(spec2, coords, width, oversamp)


def nufft_resample(ksp: ComplexImage, grid: SampleGrid) -> ComplexImage:
    """Spectrum values at each grid coordinate, arranged as an H x W k-space."""
    _require_domain(ksp, KSPACE, "nufft_resample")
    h, w = ksp.shape
    if len(grid) != h * w:
        raise ContractViolationError(
            f"grid has {len(grid)} rows, expected H*W = {h * w}")
    vals = resample_spectrum(ksp.data, grid.coords)
    return ComplexImage(vals.reshape(h, w), KSPACE)
