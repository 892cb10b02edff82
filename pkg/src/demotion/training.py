"""Training the scale-map prior through the unrolled demotion loop.

Per sample: corrupt a clean phantom, run the inner parameter search as a
differentiable graph (Adam steps, moments and all, expressed in tensor
ops), measure the mean-L1 distance between the clean image and the
refined magnitude, and backpropagate through every inner iteration to the
network weights.  The inner updates are functions of the weights via the
scale map inside the loss, so the weight gradient accumulates across all
inner steps.
"""

import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, absval, add, clip, div, grad_of, mul, sqrt, sub, tmean
from .autofocus import AutofocusConfig, _loss_graph, demote
from .core import ComplexImage, IMAGE, KSPACE, fft2c
from .diffkspace import ComplexPair, apply_inverse
from .errors import ConfigMismatchError, ContractViolationError, NumericalFailureError
from .metrics import psnr, ssim
from .motion import CorruptionConfig, corrupt, gen_trajectory, protected_rows
from .prior import PriorNet, _f32_exact, scale_map_graph

LOG_HEADER = "epoch,mean_l_nn,val_psnr,val_ssim"

_CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Outer Adam settings plus the inner search the prior is trained for."""

    outer_lr: float = 5e-5
    beta1: float = 0.900
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    inner: AutofocusConfig = AutofocusConfig()
    seed: int = 0

    def __post_init__(self):
        if self.outer_lr <= 0:
            raise ContractViolationError(f"outer_lr must be positive, got {self.outer_lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ContractViolationError("betas must lie in (0, 1)")
        if self.eps <= 0:
            raise ContractViolationError(f"eps must be positive, got {self.eps}")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ContractViolationError(
                f"epochs must be a non-negative int, got {self.epochs}")
        if not isinstance(self.inner, AutofocusConfig):
            raise ContractViolationError("inner must be an AutofocusConfig")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_l_nn: float
    val_psnr: float  # NaN when no validation set was given
    val_ssim: float


@dataclass
class TrainResult:
    net: PriorNet
    log: list


class _GraphPrior:
    """Duck prior bound to gradient-tracked weight leaves."""

    __slots__ = ("cfg", "leaves")

    def __init__(self, cfg, leaves):
        self.cfg = cfg
        self.leaves = leaves

    def scale_map(self, mag):
        return scale_map_graph(self.cfg, self.leaves, mag)


def unroll_inner(ksp_data: np.ndarray, net_cfg, leaves, inner: AutofocusConfig) -> list:
    """Run the inner search as a graph; returns the final [alpha, dx, dy].

    Mirrors the production demotion update exactly (same masking, bias
    correction, and clamp order), but keeps every iterate differentiable —
    each Adam step is a function of the weight leaves through the scale map
    inside the loss gradient.
    """
    n = ksp_data.shape[0]
    keep_mask = np.ones(n)
    keep_mask[protected_rows(n, inner.center_fraction)] = 0.0
    keep = Tensor(keep_mask)
    prior = _GraphPrior(net_cfg, leaves) if leaves is not None else None

    # the trajectory is the inner differentiation variable, so its iterates
    # must be tracked even when the weight leaves are constants
    params = [Tensor(np.zeros(n), requires_grad=True) for _ in range(3)]
    mom = [Tensor(np.zeros(n)) for _ in range(3)]
    vel = [Tensor(np.zeros(n)) for _ in range(3)]
    bounds = (inner.max_rotation_deg, inner.max_shift_px, inner.max_shift_px)

    for step in range(1, inner.n_steps + 1):
        loss = _loss_graph(ksp_data, params[0], params[1], params[2], prior)
        grads = grad_of(loss, params, stop_at_wrt=True)
        bc1 = 1.0 - inner.beta1 ** step
        bc2 = 1.0 - inner.beta2 ** step
        for i in range(3):
            g = mul(grads[i], keep)
            mom[i] = add(mul(mom[i], inner.beta1), mul(g, 1.0 - inner.beta1))
            vel[i] = add(mul(vel[i], inner.beta2), mul(mul(g, g), 1.0 - inner.beta2))
            m_hat = div(mom[i], bc1)
            v_hat = div(vel[i], bc2)
            step_i = div(mul(m_hat, inner.lr), add(sqrt(v_hat), inner.eps))
            params[i] = mul(clip(sub(params[i], step_i), -bounds[i], bounds[i]), keep)
    return params


def unrolled_loss(ksp_data: np.ndarray, clean: np.ndarray, net_cfg, leaves,
                  inner: AutofocusConfig) -> Tensor:
    """L_NN as a graph node: mean-L1 between the clean image and the
    magnitude refined by the in-graph inner search."""
    params = unroll_inner(ksp_data, net_cfg, leaves, inner)
    refined = apply_inverse(ComplexPair.constant(ksp_data), params[0], params[1], params[2])
    return tmean(absval(sub(refined.magnitude(), Tensor(np.asarray(clean, dtype=float)))))


def _corrupted_kspace(clean: np.ndarray, spec) -> np.ndarray:
    traj = gen_trajectory(spec, clean.shape[0])
    img = ComplexImage(np.asarray(clean, dtype=complex), IMAGE)
    return fft2c(corrupt(img, traj, CorruptionConfig())).data


def _sample_grads(params: dict, net_cfg, ksp_data, clean, inner):
    leaves = {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}
    loss = unrolled_loss(ksp_data, clean, net_cfg, leaves, inner)
    grads = grad_of(loss, list(leaves.values()))
    return float(loss.data), {name: g.data for name, g in zip(leaves, grads)}


def _validate(net_cfg, params, val_samples, inner):
    net = PriorNet(net_cfg, params)
    psnrs, ssims = [], []
    for clean, spec in val_samples:
        ksp = ComplexImage(_corrupted_kspace(clean, spec), KSPACE)
        mag = np.abs(demote(ksp, inner, prior=net).refined_image.data)
        psnrs.append(psnr(clean, mag))
        ssims.append(ssim(clean, mag))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def _save_checkpoint(path, params, m, v, step, next_epoch, seed, rows):
    log = np.array([[r.epoch, r.mean_l_nn, r.val_psnr, r.val_ssim] for r in rows],
                   dtype=float).reshape(len(rows), 4)
    payload = {
        "meta": np.array([_CKPT_VERSION, step, next_epoch, seed], dtype=np.int64),
        "log": log,
    }
    for name in params:
        payload[f"p:{name}"] = params[name]
        payload[f"m:{name}"] = m[name]
        payload[f"v:{name}"] = v[name]
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        np.savez(f, **payload)
    os.replace(tmp, path)


def _load_checkpoint(path, params, m, v, seed):
    with np.load(path) as data:
        meta = data["meta"]
        if int(meta[0]) != _CKPT_VERSION:
            raise ConfigMismatchError(f"checkpoint version {int(meta[0])} unsupported")
        if int(meta[3]) != seed:
            raise ConfigMismatchError(
                f"checkpoint seed {int(meta[3])} differs from configured seed {seed}")
        for name in params:
            for prefix, store in (("p", params), ("m", m), ("v", v)):
                key = f"{prefix}:{name}"
                if key not in data:
                    raise ConfigMismatchError(f"checkpoint missing tensor {key}")
                if data[key].shape != store[name].shape:
                    raise ConfigMismatchError(
                        f"checkpoint tensor {key} has shape {data[key].shape}, "
                        f"expected {store[name].shape}")
                store[name] = data[key].astype(np.float64)
        rows = [EpochStats(int(e), float(l), float(p), float(s))
                for e, l, p, s in data["log"]]
        return int(meta[1]), int(meta[2]), rows


def train(net: PriorNet, samples, cfg: TrainConfig, val_samples=(),
          checkpoint_path=None) -> TrainResult:
    """Outer Adam over the weights, one update per (shuffled) sample.

    ``samples`` and ``val_samples`` are sequences of (clean image,
    trajectory spec) pairs; corruption is regenerated from the spec, so a
    sample sees the same corrupted instance every epoch.  With
    ``checkpoint_path`` set, state is saved after every epoch and training
    resumes from the file if it exists — a resumed run reproduces the
    uninterrupted one exactly.
    """
    if len(samples) == 0 and cfg.epochs > 0:
        raise ContractViolationError("training needs at least one sample")
    params = {name: arr.copy() for name, arr in net.params.items()}
    m = {name: np.zeros_like(arr) for name, arr in params.items()}
    v = {name: np.zeros_like(arr) for name, arr in params.items()}
    step = 0
    start_epoch = 0
    rows = []
    if checkpoint_path is not None and os.path.exists(checkpoint_path):
        step, start_epoch, rows = _load_checkpoint(checkpoint_path, params, m, v, cfg.seed)

    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(samples))
        losses = []
        for idx in order:
            clean, spec = samples[idx]
            ksp_data = _corrupted_kspace(clean, spec)
            loss, grads = _sample_grads(params, net.config, ksp_data, clean, cfg.inner)
            if not np.isfinite(loss):
                raise NumericalFailureError(
                    f"non-finite training loss at epoch {epoch}, sample {int(idx)}")
            for name, g in grads.items():
                if not np.all(np.isfinite(g)):
                    raise NumericalFailureError(
                        f"non-finite gradient for {name} at epoch {epoch}, sample {int(idx)}")
            losses.append(loss)
            step += 1
            bc1 = 1.0 - cfg.beta1 ** step
            bc2 = 1.0 - cfg.beta2 ** step
            for name, g in grads.items():
                m[name] = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * g
                v[name] = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * g * g
                update = cfg.outer_lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + cfg.eps)
                params[name] = _f32_exact(params[name] - update)

        if val_samples:
            val_psnr, val_ssim = _validate(net.config, params, val_samples, cfg.inner)
        else:
            val_psnr = val_ssim = float("nan")
        rows.append(EpochStats(epoch, float(np.mean(losses)), val_psnr, val_ssim))
        if checkpoint_path is not None:
            _save_checkpoint(checkpoint_path, params, m, v, step, epoch + 1, cfg.seed, rows)

    return TrainResult(net=PriorNet(net.config, params), log=rows)


def write_log_csv(rows, path) -> None:
    """epoch, mean L_NN, validation PSNR/SSIM — one line per epoch."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(LOG_HEADER + "\n")
        for r in rows:
            f.write(f"{r.epoch},{r.mean_l_nn!r},{r.val_psnr!r},{r.val_ssim!r}\n")
