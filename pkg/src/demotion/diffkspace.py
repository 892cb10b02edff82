"""Differentiable k-space motion operators on re/im tensor pairs.

This is the inverse corruption pipeline of :mod:`demotion.motion` rebuilt
from autodiff primitives, so that per-row rotation angles and shifts can be
optimized by gradient descent and the whole computation can sit inside a
larger training graph.  Complex arrays travel as two real tensors; the
centered FFT pair enters as two mutually adjoint primitives.

The rotated gather re-derives the Kaiser-Bessel weights through
``besseli_entire`` on t = beta^2 (1 - x^2), which is smooth in t, so
derivatives of the interpolation weights with respect to the rotation
angle -- including the second-order ones a training loop needs -- come out
of the same tape.  Neighbor tap indices are locally constant in the angle
and are treated as constants of the current evaluation, exactly the
almost-everywhere derivative of the piecewise-smooth resampler.  Unlike the
production operators there is no verbatim copy of zero-motion rows: every
row goes through the full math so the gradient at zero motion exists.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    besseli_entire,
    clip,
    concat,
    cos,
    crop_nd,
    mul,
    neg,
    pad_nd,
    reshape,
    sin,
    sqrt,
    sub,
    take_at,
    tsum,
)
from .core import (
    KERNEL_WIDTH,
    OVERSAMPLING,
    fft2c_array,
    ifft2c_array,
    kb_apodization,
    kb_beta,
)
from .errors import ContractViolationError, CoordinateRangeError


class ComplexPair:
    """An H x W complex array as two real tensors of identical shape."""

    __slots__ = ("re", "im")

    def __init__(self, re, im):
        self.re = as_tensor(re)
        self.im = as_tensor(im)
        if self.re.data.shape != self.im.data.shape:
            raise ContractViolationError(
                f"re/im shapes differ: {self.re.data.shape} vs {self.im.data.shape}")

    @classmethod
    def constant(cls, arr: np.ndarray) -> "ComplexPair":
        arr = np.asarray(arr)
        return cls(Tensor(arr.real.astype(np.float64)),
                   Tensor(arr.imag.astype(np.float64)))

    @property
    def shape(self):
        return self.re.data.shape

    def value(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def magnitude(self) -> Tensor:
        return sqrt(mul(self.re, self.re) + mul(self.im, self.im))


# ---------------------------------------------------------------------------
# Centered FFT primitives (mutually adjoint: the transform is unitary)
# ---------------------------------------------------------------------------

def _cfft2c_stacked(x: Tensor) -> Tensor:
    z = fft2c_array(x.data[0] + 1j * x.data[1])
    return Tensor(np.stack([z.real, z.imag]), _parents=(
        (x, lambda g: _cifft2c_stacked(g)),))


def _cifft2c_stacked(x: Tensor) -> Tensor:
    z = ifft2c_array(x.data[0] + 1j * x.data[1])
    return Tensor(np.stack([z.real, z.imag]), _parents=(
        (x, lambda g: _cfft2c_stacked(g)),))


def _stack(pair: ComplexPair) -> Tensor:
    h, w = pair.shape
    return concat([reshape(pair.re, (1, h, w)), reshape(pair.im, (1, h, w))], axis=0)


def _unstack(stacked: Tensor) -> ComplexPair:
    _, h, w = stacked.data.shape
    re = reshape(crop_nd(stacked, ((0, 1), (0, 0), (0, 0))), (h, w))
    im = reshape(crop_nd(stacked, ((1, 0), (0, 0), (0, 0))), (h, w))
    return ComplexPair(re, im)


def cfft2c(pair: ComplexPair) -> ComplexPair:
    """Centered orthonormal 2-D FFT; matches core.fft2c_array."""
    return _unstack(_cfft2c_stacked(_stack(pair)))


def cifft2c(pair: ComplexPair) -> ComplexPair:
    """Centered orthonormal 2-D inverse FFT; matches core.ifft2c_array."""
    return _unstack(_cifft2c_stacked(_stack(pair)))


# ---------------------------------------------------------------------------
# Per-row translation (phase ramp)
# ---------------------------------------------------------------------------

def translate_rows(ksp: ComplexPair, dx: Tensor, dy: Tensor) -> ComplexPair:
    """Row i times exp(-2j*pi*(k_x dx_i / W + k_y dy_i / H)).

    Same convention as motion.apply_translation; dx/dy are per-row tensors.
    """
    h, w = ksp.shape
    dx, dy = as_tensor(dx), as_tensor(dy)
    if dx.data.shape != (h,) or dy.data.shape != (h,):
        raise ContractViolationError(
            f"translate_rows expects per-row shifts of shape ({h},)")
    kx = (np.arange(w) - w // 2)[None, :]
    ky = (np.arange(h) - h // 2)[:, None]
    phase = mul(mul(reshape(dx, (h, 1)), kx), -2.0 * np.pi / w) \
        + mul(mul(reshape(dy, (h, 1)), ky), -2.0 * np.pi / h)
    c, s = cos(phase), sin(phase)
    return ComplexPair(sub(mul(ksp.re, c), mul(ksp.im, s)),
                       mul(ksp.re, s) + mul(ksp.im, c))


# ---------------------------------------------------------------------------
# Per-row rotation (oversampled Kaiser-Bessel gather)
# ---------------------------------------------------------------------------

_APOD_CACHE: dict = {}


def _deapodization(h: int, w: int) -> np.ndarray:
    key = (h, w)
    cached = _APOD_CACHE.get(key)
    if cached is None:
        beta = kb_beta(KERNEL_WIDTH, OVERSAMPLING)
        cached = np.sqrt(h * w) * np.outer(
            kb_apodization(h, KERNEL_WIDTH, beta, OVERSAMPLING),
            kb_apodization(w, KERNEL_WIDTH, beta, OVERSAMPLING))
        _APOD_CACHE[key] = cached
    return cached


def _oversampled(ksp: ComplexPair) -> ComplexPair:
    """Deapodized, zero-padded, 2x-oversampled spectrum (core recipe)."""
    h, w = ksp.shape
    apod = _deapodization(h, w)
    img = cifft2c(ksp)
    img = ComplexPair(mul(img.re, 1.0 / apod), mul(img.im, 1.0 / apod))
    h2, w2 = OVERSAMPLING * h, OVERSAMPLING * w
    y0, x0 = h2 // 2 - h // 2, w2 // 2 - w // 2
    widths = ((y0, h2 - h - y0), (x0, w2 - w - x0))
    padded = ComplexPair(pad_nd(img.re, widths), pad_nd(img.im, widths))
    spec2 = cfft2c(padded)
    scale = np.sqrt(float(h2 * w2))  # core uses the unnormalized transform here
    return ComplexPair(mul(spec2.re, scale), mul(spec2.im, scale))


def _axis_taps(u: Tensor, n_grid: int):
    """Constant neighbor indices plus differentiable kernel weights.

    ``u`` holds oversampled-grid positions; the six taps nearest each
    position get Kaiser-Bessel weights kb(x) = I0(beta sqrt(1-x^2)) - 1
    evaluated through the entire-in-t Bessel family, so any derivative
    order with respect to u is available to the tape.
    """
    half = KERNEL_WIDTH / 2.0
    beta = kb_beta(KERNEL_WIDTH, OVERSAMPLING)
    j0 = np.ceil(u.data - half)
    offs = j0[..., None] + np.arange(KERNEL_WIDTH)          # constant taps
    xn = mul(sub(reshape(u, u.data.shape + (1,)), offs), 1.0 / half)
    t = clip(mul(sub(1.0, mul(xn, xn)), beta * beta), 0.0, None)
    wts = sub(besseli_entire(t, 0), 1.0)
    idx = (offs.astype(np.int64) + n_grid // 2) % n_grid
    return idx, wts


def rotate_rows(ksp: ComplexPair, alpha_deg: Tensor) -> ComplexPair:
    """Resample row i of the spectrum at grid coordinates turned by -alpha[i].

    Same convention as motion.apply_rotation, but every row (including
    alpha = 0 ones) goes through the interpolator so the angle gradient is
    defined everywhere.
    """
    h, w = ksp.shape
    alpha_deg = as_tensor(alpha_deg)
    if alpha_deg.data.shape != (h,):
        raise ContractViolationError(f"rotate_rows expects per-row angles of shape ({h},)")
    gy = np.broadcast_to((np.arange(h) - h // 2)[:, None], (h, w))
    gx = np.broadcast_to((np.arange(w) - w // 2)[None, :], (h, w))

    a = mul(alpha_deg, -np.pi / 180.0)
    c = reshape(cos(a), (h, 1))
    s = reshape(sin(a), (h, 1))
    ry = mul(c, gy) + mul(s, gx)
    rx = mul(neg(s), gy) + mul(c, gx)
    limit_y, limit_x = OVERSAMPLING * h / 2.0, OVERSAMPLING * w / 2.0
    if np.any(np.abs(ry.data) > limit_y) or np.any(np.abs(rx.data) > limit_x):
        raise CoordinateRangeError("rotated coordinate exceeds the oversampled Nyquist limit")

    spec2 = _oversampled(ksp)
    h2, w2 = spec2.shape
    iy, wy = _axis_taps(mul(ry, float(OVERSAMPLING)), h2)
    ix, wx = _axis_taps(mul(rx, float(OVERSAMPLING)), w2)
    flat = iy[..., :, None] * w2 + ix[..., None, :]          # (h, w, 6, 6)

    wy4 = reshape(wy, (h, w, KERNEL_WIDTH, 1))
    wx4 = reshape(wx, (h, w, 1, KERNEL_WIDTH))
    out_re = tsum(mul(mul(take_at(spec2.re, flat), wy4), wx4), axis=(2, 3))
    out_im = tsum(mul(mul(take_at(spec2.im, flat), wy4), wx4), axis=(2, 3))
    return ComplexPair(out_re, out_im)


# ---------------------------------------------------------------------------
# The differentiable inverse pipeline
# ---------------------------------------------------------------------------

def apply_inverse(ksp: ComplexPair, alpha_deg: Tensor, dx: Tensor, dy: Tensor) -> ComplexPair:
    """Candidate restoration ifft2c(T_-shift(R_-alpha(ksp))).

    Mirrors motion.invert -- negated trajectory, rotation undone before
    translation -- with the trajectory entries as differentiable tensors.
    """
    rotated = rotate_rows(ksp, neg(as_tensor(alpha_deg)))
    shifted = translate_rows(rotated, neg(as_tensor(dx)), neg(as_tensor(dy)))
    return cifft2c(shifted)
