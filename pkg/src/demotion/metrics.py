"""Reference image-quality metrics: PSNR, SSIM, MS-SSIM, VIF (pixel domain).

All metrics operate on magnitude images (complex inputs are reduced by
modulus) and take their dynamic range from the reference image rather than
assuming unit range.  MS-SSIM carries the standard five-scale exponents;
smaller images can pass a truncated weight list, which `MetricBundle`
does automatically at desk sizes.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import ContractViolationError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03

_VIF_SIGMA_N_SQ = 2.0  # noise variance of the visual channel on a 0-255 range
_VIF_SCALES = 4
_VIF_EPS = 1e-10
_VIF_MIN_SIDE = 64


def _as_magnitude(x) -> np.ndarray:
    x = np.asarray(x)
    if np.iscomplexobj(x):
        x = np.abs(x)
    return x.astype(float)


def _pair(ref, test, op: str):
    ref, test = _as_magnitude(ref), _as_magnitude(test)
    if ref.ndim != 2 or ref.shape != test.shape:
        raise ContractViolationError(
            f"{op}: expected equal 2-D shapes, got {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test) -> float:
    """10·log10(peak²/MSE) with the peak taken from the reference.

    Identical images return +inf.
    """
    ref, test = _pair(ref, test, "psnr")
    peak = ref.max()
    if peak <= 0.0:
        raise ContractViolationError("psnr: reference peak must be positive")
    mse = np.mean((ref - test) ** 2)
    if mse == 0.0:
        return np.inf
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g1 = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g = np.outer(g1, g1)
    return g / g.sum()


def _ssim_parts(ref, test):
    """Mean SSIM and mean contrast-structure term over all full windows."""
    drange = ref.max() - ref.min()
    c1 = (_K1 * drange) ** 2
    c2 = (_K2 * drange) ** 2
    g = _gaussian_kernel(_SSIM_WIN, _SSIM_SIGMA)
    mu1 = fftconvolve(ref, g, mode="valid")
    mu2 = fftconvolve(test, g, mode="valid")
    s1 = fftconvolve(ref * ref, g, mode="valid") - mu1 * mu1
    s2 = fftconvolve(test * test, g, mode="valid") - mu2 * mu2
    s12 = fftconvolve(ref * test, g, mode="valid") - mu1 * mu2
    lum = (2.0 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    cs = (2.0 * s12 + c2) / (s1 + s2 + c2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ssim(ref, test) -> float:
    """Mean local SSIM: 11×11 Gaussian window (σ=1.5), K1=0.01, K2=0.03,
    dynamic range = max(ref) − min(ref)."""
    ref, test = _pair(ref, test, "ssim")
    if min(ref.shape) < _SSIM_WIN:
        raise ContractViolationError(
            f"ssim: min side {min(ref.shape)} < window {_SSIM_WIN}")
    return _ssim_parts(ref, test)[0]


def ms_ssim(ref, test, weights=MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM: contrast-structure terms at every scale but the
    last, full SSIM at the last, combined as a weighted product; scales are
    linked by 2×2-average downsampling.  The weight list sets the scale
    count, so small images may pass a truncated list."""
    ref, test = _pair(ref, test, "ms_ssim")
    weights = [float(w) for w in weights]
    if not weights:
        raise ContractViolationError("ms_ssim: need at least one scale weight")
    min_side = _SSIM_WIN * (1 << (len(weights) - 1))
    if min(ref.shape) < min_side:
        raise ContractViolationError(
            f"ms_ssim: {len(weights)} scales need min side >= {min_side}, "
            f"got {min(ref.shape)}")
    out = 1.0
    for level, weight in enumerate(weights):
        s, cs = _ssim_parts(ref, test)
        v = s if level == len(weights) - 1 else cs
        out *= np.sign(v) * abs(v) ** weight
        if level < len(weights) - 1:
            ref = _downsample2(ref)
            test = _downsample2(test)
    return float(out)


def _downsample2(x):
    h2, w2 = x.shape[0] // 2, x.shape[1] // 2
    x = x[: 2 * h2, : 2 * w2]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim_weights_for(min_side: int):
    """Longest standard-weight prefix usable at this size, renormalized so
    the exponents still sum to the full five-scale mass."""
    levels = 0
    while levels < len(MS_SSIM_WEIGHTS) and min_side >= _SSIM_WIN * (1 << levels):
        levels += 1
    if levels == 0:
        raise ContractViolationError(
            f"ms_ssim: min side {min_side} < window {_SSIM_WIN}")
    prefix = MS_SSIM_WEIGHTS[:levels]
    total = sum(MS_SSIM_WEIGHTS) / sum(prefix)
    return tuple(w * total for w in prefix)


def vif(ref, test) -> float:
    """Pixel-domain visual information fidelity over a 4-scale Gaussian
    pyramid with channel-noise variance 2 on a 0–255 mapping of the
    reference's dynamic range."""
    ref, test = _pair(ref, test, "vif")
    if min(ref.shape) < _VIF_MIN_SIDE:
        raise ContractViolationError(
            f"vif: min side {min(ref.shape)} < required {_VIF_MIN_SIDE}")
    lo, hi = ref.min(), ref.max()
    if hi <= lo:
        raise ContractViolationError("vif: reference image is constant")
    scale = 255.0 / (hi - lo)
    ref = (ref - lo) * scale
    test = (test - lo) * scale

    num = 0.0
    den = 0.0
    for level in range(1, _VIF_SCALES + 1):
        size = (1 << (_VIF_SCALES - level + 1)) + 1  # 17, 9, 5, 3
        win = _gaussian_kernel(size, size / 5.0)
        if level > 1:
            ref = fftconvolve(ref, win, mode="valid")[::2, ::2]
            test = fftconvolve(test, win, mode="valid")[::2, ::2]
        mu1 = fftconvolve(ref, win, mode="valid")
        mu2 = fftconvolve(test, win, mode="valid")
        sigma1_sq = fftconvolve(ref * ref, win, mode="valid") - mu1 * mu1
        sigma2_sq = fftconvolve(test * test, win, mode="valid") - mu2 * mu2
        sigma12 = fftconvolve(ref * test, win, mode="valid") - mu1 * mu2
        sigma1_sq = np.clip(sigma1_sq, 0.0, None)
        sigma2_sq = np.clip(sigma2_sq, 0.0, None)

        g = sigma12 / (sigma1_sq + _VIF_EPS)
        sv_sq = sigma2_sq - g * sigma12
        # degenerate blocks: no reference signal, no test signal, or
        # anti-correlation — handled exactly as in the reference recipe
        no_ref = sigma1_sq < _VIF_EPS
        g = np.where(no_ref, 0.0, g)
        sv_sq = np.where(no_ref, sigma2_sq, sv_sq)
        sigma1_sq = np.where(no_ref, 0.0, sigma1_sq)
        no_test = sigma2_sq < _VIF_EPS
        g = np.where(no_test, 0.0, g)
        sv_sq = np.where(no_test, 0.0, sv_sq)
        neg = g < 0.0
        sv_sq = np.where(neg, sigma2_sq, sv_sq)
        g = np.where(neg, 0.0, g)
        sv_sq = np.clip(sv_sq, _VIF_EPS, None)

        num += float(np.sum(np.log(1.0 + g * g * sigma1_sq / (sv_sq + _VIF_SIGMA_N_SQ))))
        den += float(np.sum(np.log(1.0 + sigma1_sq / _VIF_SIGMA_N_SQ)))
    if den == 0.0:
        raise ContractViolationError("vif: reference carries no information")
    return num / den


@dataclass(frozen=True)
class MetricBundle:
    psnr: float
    ssim: float
    ms_ssim: float
    vif: float

    @classmethod
    def evaluate(cls, ref, test) -> "MetricBundle":
        """All four metrics at once; MS-SSIM drops to the scale count the
        image size supports (renormalized weights) so desk-size 64×64 runs
        produce the full bundle."""
        ref, test = _pair(ref, test, "MetricBundle.evaluate")
        weights = ms_ssim_weights_for(min(ref.shape))
        return cls(psnr=psnr(ref, test), ssim=ssim(ref, test),
                   ms_ssim=ms_ssim(ref, test, weights), vif=vif(ref, test))
