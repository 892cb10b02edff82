"""Blind demotion: Adam descent on per-row motion parameters.

The optimizer never sees the true trajectory.  It forms a candidate
restoration by applying the inverse pipeline at the current estimate,
scores it with the mean magnitude (motion smears sharp structure, raising
L1), optionally rescaled pixelwise by a learned prior, and follows exact
reverse-mode gradients of that score through the FFTs, the phase ramps and
the Kaiser-Bessel interpolation weights.

Optimization variables are the per-row (alpha, dx, dy) values themselves,
initialized at zero, box-clamped to the physical bounds after every step,
with the protected center rows pinned at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, grad_of, mul, tmean
from .core import ComplexImage, KSPACE, _require_domain, ifft2c
from .diffkspace import ComplexPair, apply_inverse
from .errors import ContractViolationError, NumericalFailureError
from .motion import (
    DEFAULT_CENTER_FRACTION,
    MAX_ROTATION_DEG,
    MAX_SHIFT_PX,
    MotionTrajectory,
    apply_rotation,
    apply_translation,
    protected_rows,
)


@dataclass(frozen=True)
class AutofocusConfig:
    """Inner-loop optimizer settings.

    The defaults are the reference operating point (30 steps at 3e-4).
    Note that Adam's per-step displacement is capped near ``lr``, so the
    reference point explores a sub-1e-2-pixel neighbourhood of zero; use
    ``desk_preset`` when the goal is to actually traverse pixel-scale
    corruptions on small phantoms.
    """

    n_steps: int = 30
    lr: float = 3e-4
    beta1: float = 0.900
    beta2: float = 0.999
    eps: float = 1e-8
    max_rotation_deg: float = MAX_ROTATION_DEG
    max_shift_px: float = MAX_SHIFT_PX
    center_fraction: float = DEFAULT_CENTER_FRACTION

    def __post_init__(self):
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 0:
            raise ContractViolationError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        if not self.lr > 0:
            raise ContractViolationError(f"lr must be positive, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 < b < 1.0:
                raise ContractViolationError(f"{name} must lie in (0, 1), got {b}")
        if not self.eps > 0:
            raise ContractViolationError(f"eps must be positive, got {self.eps}")
        if self.max_rotation_deg <= 0 or self.max_shift_px <= 0:
            raise ContractViolationError("bounds must be positive")
        if not 0.0 <= self.center_fraction < 1.0:
            raise ContractViolationError(
                f"center_fraction must lie in [0, 1), got {self.center_fraction}")


def desk_preset(n_steps: int = 120) -> AutofocusConfig:
    """Step count and rate sized for pixel-scale corruptions on small phantoms."""
    return AutofocusConfig(n_steps=n_steps, lr=0.03)


@dataclass
class AdamState:
    """Moment accumulators over the (n_rows, 3) parameter block [alpha, dx, dy]."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n_rows: int) -> "AdamState":
        return cls(np.zeros((n_rows, 3)), np.zeros((n_rows, 3)))


@dataclass
class DemotionResult:
    refined_image: ComplexImage
    refined_kspace: ComplexImage
    estimated_traj: MotionTrajectory
    loss_history: list
    used_prior: bool


def _check_rows(ksp: ComplexImage, traj: MotionTrajectory, op: str) -> None:
    if traj.n_rows != ksp.height:
        raise ContractViolationError(
            f"{op}: trajectory has {traj.n_rows} rows, k-space has {ksp.height}")


def _loss_graph(ksp_data: np.ndarray, alpha: Tensor, dx: Tensor, dy: Tensor, prior):
    candidate = apply_inverse(ComplexPair.constant(ksp_data), alpha, dx, dy)
    mag = candidate.magnitude()
    if prior is not None:
        mag = mul(mag, prior.scale_map(mag))
    return tmean(mag)


def af_loss(ksp_corrupted: ComplexImage, traj: MotionTrajectory, prior=None) -> float:
    """Mean |candidate restoration|, optionally scaled by the prior's map.

    The candidate applies the inverse of ``traj`` to the corrupted k-space;
    at the zero trajectory this is the corrupted image's own mean magnitude
    (up to interpolation rounding).
    """
    _require_domain(ksp_corrupted, KSPACE, "af_loss")
    _check_rows(ksp_corrupted, traj, "af_loss")
    graph = _loss_graph(ksp_corrupted.data, Tensor(traj.alpha),
                        Tensor(traj.shift[:, 0]), Tensor(traj.shift[:, 1]), prior)
    return float(graph.data)


def _loss_and_grad(ksp_data, alpha, shift, prior):
    leaves = [Tensor(alpha, requires_grad=True),
              Tensor(shift[:, 0], requires_grad=True),
              Tensor(shift[:, 1], requires_grad=True)]
    loss = _loss_graph(ksp_data, *leaves, prior)
    ga, gx, gy = (g.data for g in grad_of(loss, leaves, stop_at_wrt=True))
    for name, g in (("alpha", ga), ("dx", gx), ("dy", gy)):
        bad = ~np.isfinite(g)
        if bad.any():
            raise NumericalFailureError(
                f"non-finite {name} gradient at row {int(np.flatnonzero(bad)[0])}")
    if not np.isfinite(loss.data):
        raise NumericalFailureError("non-finite autofocus loss")
    return float(loss.data), ga, np.column_stack([gx, gy])


def af_grad(ksp_corrupted: ComplexImage, traj: MotionTrajectory, prior=None):
    """Exact gradient of af_loss w.r.t. every per-row alpha and shift.

    Returns ``(d_alpha, d_shift)`` with shapes (n,) and (n, 2).  Translation
    gradients arrive through the phase ramp, rotation gradients through the
    interpolation-weight derivatives and the rotated-coordinate chain rule,
    and (when a prior is given) both include the path through the prior's
    input.
    """
    _require_domain(ksp_corrupted, KSPACE, "af_grad")
    _check_rows(ksp_corrupted, traj, "af_grad")
    _, d_alpha, d_shift = _loss_and_grad(ksp_corrupted.data, traj.alpha, traj.shift, prior)
    return d_alpha, d_shift


def demote(ksp_corrupted: ComplexImage, cfg: AutofocusConfig = AutofocusConfig(),
           prior=None) -> DemotionResult:
    """Blind inner loop: estimate the trajectory, return the refined k-space.

    Starts from zero motion, takes ``cfg.n_steps`` Adam updates on the
    per-row parameters, clamps to the physical bounds after each step, and
    keeps the protected center rows frozen at zero.  The prior (if any) is
    only evaluated, never updated.  ``loss_history`` holds the loss at the
    initial point and after every step.
    """
    _require_domain(ksp_corrupted, KSPACE, "demote")
    n = ksp_corrupted.height
    prot = protected_rows(n, cfg.center_fraction)
    params = np.zeros((n, 3))
    state = AdamState.zeros(n)
    history = []

    for _ in range(cfg.n_steps):
        loss, d_alpha, d_shift = _loss_and_grad(
            ksp_corrupted.data, params[:, 0], params[:, 1:3], prior)
        history.append(loss)
        grad = np.column_stack([d_alpha, d_shift])
        grad[prot] = 0.0
        state.step += 1
        state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
        state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
        m_hat = state.m / (1.0 - cfg.beta1 ** state.step)
        v_hat = state.v / (1.0 - cfg.beta2 ** state.step)
        params = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        params[:, 0] = np.clip(params[:, 0], -cfg.max_rotation_deg, cfg.max_rotation_deg)
        params[:, 1:3] = np.clip(params[:, 1:3], -cfg.max_shift_px, cfg.max_shift_px)
        params[prot] = 0.0

    estimated = MotionTrajectory(params[:, 0].copy(), params[:, 1:3].copy())
    final_loss = _loss_graph(ksp_corrupted.data, Tensor(estimated.alpha),
                             Tensor(estimated.shift[:, 0]),
                             Tensor(estimated.shift[:, 1]), prior)
    history.append(float(final_loss.data))

    neg = estimated.negated()
    refined_ksp = apply_translation(apply_rotation(ksp_corrupted, neg), neg)
    return DemotionResult(
        refined_image=ifft2c(refined_ksp),
        refined_kspace=refined_ksp,
        estimated_traj=estimated,
        loss_history=history,
        used_prior=prior is not None,
    )
