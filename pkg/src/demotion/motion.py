"""Rigid-motion trajectories and the k-space corruption operator.

Each phase-encode row is acquired at a different instant, so in-plane rigid
motion shows up as a per-row (rotation, shift) pair acting on that row of
k-space.  Translation is a pure per-row phase ramp (Fourier shift theorem);
rotation resamples the row at rotated frequency coordinates.  Both operators
are reversible, which is what makes blind correction possible at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.signal import savgol_filter

from .core import (
    KSPACE,
    IMAGE,
    ComplexImage,
    _require_domain,
    canonical_grid,
    fft2c,
    ifft2c,
    resample_spectrum,
)
from .errors import ContractViolationError

MAX_ROTATION_DEG = 2.0
MAX_SHIFT_PX = 5.0
DEFAULT_CENTER_FRACTION = 0.08

# Random trajectories: i.i.d. Gaussian per row, then Savitzky-Golay smoothing.
SAVGOL_WINDOW = 21
SAVGOL_ORDER = 3

MIN_TRAJECTORY_ROWS = 16

TRAJECTORY_SCHEMA_VERSION = 1


class TrajectoryKind(Enum):
    SINGLE_SINE = "single_sine"
    HARMONIC = "harmonic"
    RANDOM = "random"


class Severity(Enum):
    MILD = "mild"
    SEVERE = "severe"


# (rotation amplitude in degrees, shift amplitude in pixels) per severity;
# severe sits exactly at the trajectory bounds.
SEVERITY_AMPLITUDES = {
    Severity.MILD: (1.0, 2.0),
    Severity.SEVERE: (MAX_ROTATION_DEG, MAX_SHIFT_PX),
}


@dataclass
class MotionTrajectory:
    """Per-row rigid motion: rotation angle and (dx, dy) shift.

    ``alpha[i]`` is in degrees, ``shift[i] = (dx, dy)`` in pixels along the
    read (x) and phase-encode (y) axes.  Bounds are |alpha| <= 2 degrees and
    max-norm shift <= 5 pixels.
    """

    alpha: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        shift = np.asarray(self.shift, dtype=np.float64)
        if alpha.ndim != 1:
            raise ContractViolationError(f"alpha must be 1-D, got shape {alpha.shape}")
        if shift.shape != (alpha.shape[0], 2):
            raise ContractViolationError(
                f"shift must be ({alpha.shape[0]}, 2), got {shift.shape}")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(shift))):
            raise ContractViolationError("trajectory contains NaN or Inf")
        if np.any(np.abs(alpha) > MAX_ROTATION_DEG):
            raise ContractViolationError(
                f"|alpha| exceeds {MAX_ROTATION_DEG} degrees (max {np.abs(alpha).max():g})")
        if np.any(np.abs(shift) > MAX_SHIFT_PX):
            raise ContractViolationError(
                f"|shift| exceeds {MAX_SHIFT_PX} pixels (max {np.abs(shift).max():g})")
        self.alpha = alpha
        self.shift = shift

    @property
    def n_rows(self) -> int:
        return self.alpha.shape[0]

    def negated(self) -> "MotionTrajectory":
        return MotionTrajectory(-self.alpha, -self.shift)

    @classmethod
    def zero(cls, n_rows: int) -> "MotionTrajectory":
        return cls(np.zeros(n_rows), np.zeros((n_rows, 2)))


@dataclass
class TrajectorySpec:
    """Recipe for generating a motion trajectory.

    ``components`` holds (frequency in cycles per k-space traversal, phase in
    radians, weight) triples for the sinusoid kinds; Random ignores them and
    draws smoothed Gaussian noise instead.
    """

    kind: TrajectoryKind
    amplitude_deg: float
    amplitude_px: float
    components: tuple = ()
    seed: int = 0
    severity: Severity = Severity.MILD

    def __post_init__(self):
        self.kind = TrajectoryKind(self.kind)
        self.severity = Severity(self.severity)
        self.components = tuple(
            (float(f), float(p), float(w)) for f, p, w in self.components)
        n = len(self.components)
        if self.kind is TrajectoryKind.SINGLE_SINE and n != 1:
            raise ContractViolationError(f"single_sine needs exactly 1 component, got {n}")
        if self.kind is TrajectoryKind.HARMONIC and n < 2:
            raise ContractViolationError(f"harmonic needs >= 2 components, got {n}")
        if not (0.0 <= self.amplitude_deg <= MAX_ROTATION_DEG):
            raise ContractViolationError(
                f"amplitude_deg must be in [0, {MAX_ROTATION_DEG}], got {self.amplitude_deg}")
        if not (0.0 <= self.amplitude_px <= MAX_SHIFT_PX):
            raise ContractViolationError(
                f"amplitude_px must be in [0, {MAX_SHIFT_PX}], got {self.amplitude_px}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ContractViolationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        self.seed = int(self.seed)

    @classmethod
    def make(cls, kind, severity=Severity.MILD, seed: int = 0,
             amplitude_deg: float | None = None,
             amplitude_px: float | None = None,
             n_components: int | None = None) -> "TrajectorySpec":
        """Draw a randomized spec of the given kind and severity."""
        kind = TrajectoryKind(kind)
        severity = Severity(severity)
        amp_deg, amp_px = SEVERITY_AMPLITUDES[severity]
        if amplitude_deg is not None:
            amp_deg = float(amplitude_deg)
        if amplitude_px is not None:
            amp_px = float(amplitude_px)
        rng = np.random.default_rng(seed)
        if kind is TrajectoryKind.SINGLE_SINE:
            n = 1
        elif kind is TrajectoryKind.HARMONIC:
            n = int(n_components) if n_components is not None else int(rng.integers(2, 5))
        else:
            n = 0
        components = tuple(
            (float(rng.uniform(1.0, 6.0)),
             float(rng.uniform(0.0, 2.0 * np.pi)),
             float(rng.uniform(0.3, 1.0)))
            for _ in range(n))
        return cls(kind, amp_deg, amp_px, components, int(seed), severity)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": TRAJECTORY_SCHEMA_VERSION,
            "kind": self.kind.value,
            "amplitude_deg": self.amplitude_deg,
            "amplitude_px": self.amplitude_px,
            "components": [list(c) for c in self.components],
            "seed": self.seed,
            "severity": self.severity.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrajectorySpec":
        version = doc.get("schema_version")
        if version != TRAJECTORY_SCHEMA_VERSION:
            raise ContractViolationError(
                f"unsupported trajectory schema_version {version!r}")
        return cls(
            kind=TrajectoryKind(doc["kind"]),
            amplitude_deg=float(doc["amplitude_deg"]),
            amplitude_px=float(doc["amplitude_px"]),
            components=tuple(tuple(c) for c in doc["components"]),
            seed=int(doc["seed"]),
            severity=Severity(doc["severity"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "TrajectorySpec":
        return cls.from_json_dict(json.loads(text))


@dataclass
class CorruptionConfig:
    """How much of the k-space center stays motion-free, and optional noise.

    ``noise_snr_db = None`` (or +inf) disables noise injection.
    """

    center_fraction: float = DEFAULT_CENTER_FRACTION
    noise_snr_db: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.center_fraction < 1.0):
            raise ContractViolationError(
                f"center_fraction must be in [0, 1), got {self.center_fraction}")
        if self.noise_snr_db is not None:
            snr = float(self.noise_snr_db)
            if np.isnan(snr) or snr == -np.inf:
                raise ContractViolationError(f"noise_snr_db must be finite or +inf, got {snr}")
            self.noise_snr_db = snr


def protected_rows(n_rows: int, center_fraction: float = DEFAULT_CENTER_FRACTION) -> np.ndarray:
    """Row indices of the motion-free center band.

    The band holds an even number of rows, 2*round(center_fraction*n_rows/2),
    split as half below the DC row and half at-or-above it (DC included).
    """
    if not (0.0 <= center_fraction < 1.0):
        raise ContractViolationError(
            f"center_fraction must be in [0, 1), got {center_fraction}")
    half = int(round(center_fraction * n_rows / 2.0))
    start = n_rows // 2 - half
    return np.arange(start, start + 2 * half)


# ---------------------------------------------------------------------------
# Trajectory generation
# ---------------------------------------------------------------------------

def _sine_channel(components, n_rows: int, rng) -> np.ndarray:
    # one phase offset per channel so alpha/dx/dy are distinct waveforms
    offset = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n_rows, dtype=np.float64) / n_rows
    wave = np.zeros(n_rows)
    for freq, phase, weight in components:
        wave += weight * np.sin(2.0 * np.pi * freq * t + phase + offset)
    return wave


def _random_channel(n_rows: int, rng) -> np.ndarray:
    raw = rng.standard_normal(n_rows)
    window = SAVGOL_WINDOW
    if window > n_rows:
        window = n_rows if n_rows % 2 == 1 else n_rows - 1
    return savgol_filter(raw, window, SAVGOL_ORDER, mode="interp")


def _scaled(wave: np.ndarray, amplitude: float) -> np.ndarray:
    peak = np.max(np.abs(wave))
    if peak == 0.0 or amplitude == 0.0:
        return np.zeros_like(wave)
    return wave * (amplitude / peak)


def gen_trajectory(spec: TrajectorySpec, n_rows: int, rng=None,
                   center_fraction: float = DEFAULT_CENTER_FRACTION) -> MotionTrajectory:
    """Generate a per-row motion trajectory from a spec.

    Parameters
    ----------
    spec : TrajectorySpec
        Trajectory kind, amplitudes, components, and seed.
    n_rows : int
        Number of k-space rows (>= 16).
    rng : numpy.random.Generator, optional
        Defaults to a fresh generator seeded with ``spec.seed``.
    center_fraction : float
        Protected center band whose rows are forced to zero motion.

    Notes
    -----
    Channels are drawn in the fixed order alpha, dx, dy.  Sinusoid kinds
    evaluate the weighted component sum at each row index (plus a per-channel
    phase offset); Random draws i.i.d. Gaussians per row and smooths them with
    a Savitzky-Golay filter (window 21, order 3).  Every channel is rescaled
    so its peak equals the configured amplitude, then clamped to the bounds.
    """
    if n_rows < MIN_TRAJECTORY_ROWS:
        raise ContractViolationError(
            f"n_rows must be >= {MIN_TRAJECTORY_ROWS}, got {n_rows}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    if spec.kind is TrajectoryKind.RANDOM:
        channels = [_random_channel(n_rows, rng) for _ in range(3)]
    else:
        channels = [_sine_channel(spec.components, n_rows, rng) for _ in range(3)]

    alpha = _scaled(channels[0], spec.amplitude_deg)
    dx = _scaled(channels[1], spec.amplitude_px)
    dy = _scaled(channels[2], spec.amplitude_px)

    alpha = np.clip(alpha, -MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    shift = np.clip(np.stack([dx, dy], axis=1), -MAX_SHIFT_PX, MAX_SHIFT_PX)

    prot = protected_rows(n_rows, center_fraction)
    alpha[prot] = 0.0
    shift[prot] = 0.0
    return MotionTrajectory(alpha, shift)


# ---------------------------------------------------------------------------
# Corruption operators
# ---------------------------------------------------------------------------

def _check_rows(ksp: ComplexImage, traj: MotionTrajectory, op: str) -> None:
    if traj.n_rows != ksp.height:
        raise ContractViolationError(
            f"{op}: trajectory has {traj.n_rows} rows, k-space has {ksp.height}")


def apply_translation(ksp: ComplexImage, traj: MotionTrajectory) -> ComplexImage:
    """Multiply row i by the phase ramp for its (dx, dy) shift.

    Row i picks up exp(-2j*pi*(k_x*dx_i/W + k_y*dy_i/H)) at centered integer
    frequencies (k_y fixed per row), which shifts the image content by
    (dx_i, dy_i) pixels.  Sample magnitudes are untouched.  Zero-shift rows
    are copied verbatim.
    """
    _require_domain(ksp, KSPACE, "apply_translation")
    _check_rows(ksp, traj, "apply_translation")
    h, w = ksp.shape
    ky = (np.arange(h) - h // 2)[:, None]
    kx = (np.arange(w) - w // 2)[None, :]
    dx = traj.shift[:, 0:1]
    dy = traj.shift[:, 1:2]
    ramp = np.exp(-2j * np.pi * (kx * dx / w + ky * dy / h))
    out = ksp.data * ramp
    still = (traj.shift[:, 0] == 0.0) & (traj.shift[:, 1] == 0.0)
    out[still] = ksp.data[still]
    return ComplexImage(out, KSPACE)


def apply_rotation(ksp: ComplexImage, traj: MotionTrajectory) -> ComplexImage:
    """Resample row i of the spectrum at its grid coordinates rotated by alpha[i].

    Row i's coordinates turn by -alpha[i], so positive alpha rotates the
    reconstructed image content by -alpha degrees in scipy.ndimage.rotate
    terms (the sign the rotation-oracle test pins down).  Rows with alpha
    exactly zero (the protected center among them) are copied verbatim; the
    rest share one oversampled spectrum and are gathered in a single
    interpolation pass.
    """
    _require_domain(ksp, KSPACE, "apply_rotation")
    _check_rows(ksp, traj, "apply_rotation")
    h, w = ksp.shape
    out = ksp.data.copy()
    moving = np.flatnonzero(traj.alpha != 0.0)
    if moving.size == 0:
        return ComplexImage(out, KSPACE)
    grid = canonical_grid(h, w).coords.reshape(h, w, 2)
    a = np.deg2rad(-traj.alpha[moving])
    c, s = np.cos(a), np.sin(a)
    rot = np.empty((moving.size, 2, 2))
    rot[:, 0, 0] = c
    rot[:, 0, 1] = s
    rot[:, 1, 0] = -s
    rot[:, 1, 1] = c
    coords = np.einsum("mab,mwb->mwa", rot, grid[moving])
    vals = resample_spectrum(ksp.data, coords.reshape(-1, 2))
    out[moving] = vals.reshape(moving.size, w)
    return ComplexImage(out, KSPACE)


def _is_zero(traj: MotionTrajectory) -> bool:
    return not (np.any(traj.alpha) or np.any(traj.shift))


def _check_center_still(traj: MotionTrajectory, cfg: CorruptionConfig, op: str) -> None:
    prot = protected_rows(traj.n_rows, cfg.center_fraction)
    if prot.size and (np.any(traj.alpha[prot] != 0.0) or np.any(traj.shift[prot] != 0.0)):
        raise ContractViolationError(
            f"{op}: trajectory carries motion inside the protected center band")


def corrupt(img: ComplexImage, traj: MotionTrajectory, cfg: CorruptionConfig,
            rng=None) -> ComplexImage:
    """Motion-corrupt an image: translate, then rotate, in k-space.

    Returns ifft2c(R(T(fft2c(img)))).  If ``cfg.noise_snr_db`` is set, complex
    Gaussian noise at that SNR is added to k-space after the motion (``rng``
    required then).  The protected center band must carry zero motion.
    """
    _require_domain(img, IMAGE, "corrupt")
    _check_center_still(traj, cfg, "corrupt")
    if _is_zero(traj) and (cfg.noise_snr_db is None or cfg.noise_snr_db == np.inf):
        # zero motion is the identity; skip the transform round trip so the
        # no-corruption case stays bit-exact
        return ComplexImage(img.data.copy(), IMAGE)
    ksp = apply_rotation(apply_translation(fft2c(img), traj), traj)
    if cfg.noise_snr_db is not None and cfg.noise_snr_db != np.inf:
        if rng is None:
            raise ContractViolationError("corrupt: noise requested but no rng given")
        ksp = add_noise(ksp, cfg.noise_snr_db, rng)
    return ifft2c(ksp)


def invert(img_corrupted: ComplexImage, traj: MotionTrajectory,
           cfg: CorruptionConfig) -> ComplexImage:
    """Undo a known corruption: rotate back, then translate back.

    Applies the negated trajectory in the reverse operator order, so
    invert(corrupt(x, traj), traj) recovers x up to resampling error.
    """
    _require_domain(img_corrupted, IMAGE, "invert")
    _check_center_still(traj, cfg, "invert")
    if _is_zero(traj):
        return ComplexImage(img_corrupted.data.copy(), IMAGE)
    neg = traj.negated()
    ksp = apply_translation(apply_rotation(fft2c(img_corrupted), neg), neg)
    return ifft2c(ksp)


def add_noise(ksp: ComplexImage, snr_db: float, rng) -> ComplexImage:
    """Add i.i.d. complex Gaussian noise at the requested k-space SNR.

    sigma is chosen so 10*log10(signal power / expected noise power) equals
    ``snr_db``.  ``snr_db = +inf`` is the noise-disabled sentinel and returns
    an unchanged copy.
    """
    _require_domain(ksp, KSPACE, "add_noise")
    snr_db = float(snr_db)
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ContractViolationError(f"snr_db must be finite or +inf, got {snr_db}")
    if snr_db == np.inf:
        return ComplexImage(ksp.data.copy(), KSPACE)
    power = np.sum(np.abs(ksp.data) ** 2)
    sigma2 = power / (ksp.data.size * 10.0 ** (snr_db / 10.0))
    scale = np.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(ksp.shape) + 1j * rng.standard_normal(ksp.shape))
    return ComplexImage(ksp.data + noise, KSPACE)
