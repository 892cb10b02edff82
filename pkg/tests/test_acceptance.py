"""Acceptance gate: one test per shipped guarantee, one printed verdict each.

Each test computes its full evidence first, prints a single
``criterion N (...): PASS/FAIL`` line (visible under ``pytest -rA`` or
``-s``), then asserts.  Tolerances and budgets are stated inline; schedules
are chosen for the desk-scale geometry but every asserted number is the
guarantee itself, never a softened stand-in.
"""

import time

import numpy as np
import pytest

from demotion import (
    AutofocusConfig,
    ComplexImage,
    CorruptionConfig,
    ExperimentSpec,
    IMAGE,
    Method,
    MotionTrajectory,
    PriorNetConfig,
    Severity,
    TrainConfig,
    TrajectoryKind,
    TrajectorySpec,
    af_grad,
    af_loss,
    apply_rotation,
    apply_translation,
    corrupt,
    desk_preset,
    fft2c,
    gen_phantoms,
    gen_trajectory,
    invert,
    ms_ssim,
    ms_ssim_weights_for,
    paired_t,
    psnr,
    random_phantom,
    run_experiment,
    ssim,
    train_prior_cmd,
)
from demotion.bench import METRIC_COLUMNS, _metric_series
from demotion.cli import main as cli_main
from demotion.prior import init_params
from demotion.training import _sample_grads, unrolled_loss

from oracles import ms_ssim_naive, psnr_naive, ssim_naive

NUFFT_TOL = 1e-6  # documented single-pass identity tolerance


def _verdict(num: int, name: str, ok: bool, detail: str) -> str:
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} — {detail}"
    print("\n" + line, flush=True)
    return line


@pytest.fixture(scope="module")
def phantoms50(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept50")
    return gen_phantoms(50, 64, seed=101, out_dir=str(out))


def test_criterion_1_round_trip_physics():
    # 100 seeded pairs per trajectory kind at 64x64, mild severity:
    # ||invert(corrupt(x)) - x||_2 / ||x||_2 < 5e-3 for every pair, < 60 s.
    cfg = CorruptionConfig()
    t0 = time.perf_counter()
    errs = []
    for kind in TrajectoryKind:
        for seed in range(100):
            clean = random_phantom(64, np.random.default_rng([1, seed]))
            img = ComplexImage(clean.astype(complex), IMAGE)
            traj = gen_trajectory(
                TrajectorySpec.make(kind, Severity.MILD, seed), 64)
            back = invert(corrupt(img, traj, cfg), traj, cfg)
            errs.append(np.linalg.norm(back.data - img.data)
                        / np.linalg.norm(img.data))
    elapsed = time.perf_counter() - t0
    worst = float(np.max(errs))
    ok = worst < 5e-3 and elapsed < 60.0
    line = _verdict(1, "round-trip physics", ok,
                    f"max rel err {worst:.3e} (tol 5e-3), "
                    f"mean {np.mean(errs):.3e}, 300 pairs in {elapsed:.1f}s "
                    f"(budget 60s)")
    assert ok, line


def test_criterion_2_commutativity():
    # T.R vs R.T relative discrepancy < 2x single-pass NUFFT tolerance
    # on 50 seeded cases.
    tol = 2.0 * NUFFT_TOL
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng([2, seed])
        clean = random_phantom(64, rng)
        ksp = fft2c(ComplexImage(clean.astype(complex), IMAGE))
        alpha = np.full(64, rng.uniform(-1.0, 1.0))
        shift = np.tile(rng.uniform(-2.0, 2.0, 2), (64, 1))
        traj = MotionTrajectory(alpha, shift)
        tr = apply_translation(apply_rotation(ksp, traj), traj)
        rt = apply_rotation(apply_translation(ksp, traj), traj)
        disc = np.linalg.norm(tr.data - rt.data) / np.linalg.norm(tr.data)
        worst = max(worst, float(disc))
    ok = worst < tol
    line = _verdict(2, "commutativity", ok,
                    f"max rel discrepancy {worst:.3e} (tol {tol:.1e}, "
                    f"50 cases)")
    assert ok, line


def test_criterion_3_gradient_soundness():
    t0 = time.perf_counter()

    # (a) autofocus gradient vs central differences on a random 32x32 case
    # (h = 1e-4 px for shifts, 1e-3 deg for alpha): every component within
    # 1e-3 relative or 1e-8 absolute.
    rng = np.random.default_rng(3)
    clean = random_phantom(32, rng)
    traj0 = gen_trajectory(
        TrajectorySpec.make(TrajectoryKind.SINGLE_SINE, Severity.MILD, 5), 32)
    ksp = fft2c(corrupt(ComplexImage(clean.astype(complex), IMAGE), traj0,
                        CorruptionConfig()))
    alpha = rng.uniform(-0.5, 0.5, 32)
    shift = rng.uniform(-1.0, 1.0, (32, 2))
    d_alpha, d_shift = af_grad(ksp, MotionTrajectory(alpha, shift))

    a_ok, worst_a = True, 0.0
    for i in range(32):
        for j in range(3):
            h = 1e-3 if j == 0 else 1e-4
            analytic = d_alpha[i] if j == 0 else d_shift[i, j - 1]
            hi_a, lo_a = alpha.copy(), alpha.copy()
            hi_s, lo_s = shift.copy(), shift.copy()
            if j == 0:
                hi_a[i] += h
                lo_a[i] -= h
            else:
                hi_s[i, j - 1] += h
                lo_s[i, j - 1] -= h
            num = (af_loss(ksp, MotionTrajectory(hi_a, hi_s))
                   - af_loss(ksp, MotionTrajectory(lo_a, lo_s))) / (2 * h)
            a_ok &= abs(analytic - num) <= max(1e-3 * abs(num), 1e-8)
            worst_a = max(worst_a, abs(analytic - num) / max(abs(num), 1e-8))

    # (b) unrolled dL_NN/dp vs central differences through the entire
    # pipeline: depth-1 net, 2 inner steps, 16x16 image, 20 sampled
    # parameters, 1e-2 relative.
    net_cfg = PriorNetConfig(depth=1, base_channels=4)
    params = init_params(net_cfg, seed=7)
    clean16 = random_phantom(16, np.random.default_rng(8))
    traj16 = gen_trajectory(
        TrajectorySpec.make(TrajectoryKind.SINGLE_SINE, Severity.MILD, 9), 16)
    ksp16 = fft2c(corrupt(ComplexImage(clean16.astype(complex), IMAGE),
                          traj16, CorruptionConfig())).data
    inner = AutofocusConfig(n_steps=2, lr=0.03)
    _, grads = _sample_grads(params, net_cfg, ksp16, clean16, inner)

    entry_rng = np.random.default_rng(13)
    names = sorted(params)
    b_ok, worst_b = True, 0.0
    h = 1e-4  # below the leaky-relu/L1 kink spacing of the unrolled loss
    for _ in range(20):
        name = names[entry_rng.integers(len(names))]
        flat = entry_rng.integers(params[name].size)
        idx = np.unravel_index(flat, params[name].shape)

        def loss_at(eps):
            p = {k: v.copy() for k, v in params.items()}
            p[name][idx] += eps
            return unrolled_loss(p, net_cfg, ksp16, clean16, inner)

        num = (loss_at(+h) - loss_at(-h)) / (2 * h)
        rel = abs(grads[name][idx] - num) / max(abs(num), 1e-6)
        b_ok &= rel <= 1e-2
        worst_b = max(worst_b, rel)

    elapsed = time.perf_counter() - t0
    ok = bool(a_ok) and bool(b_ok) and elapsed < 600.0
    line = _verdict(3, "gradient soundness", ok,
                    f"autofocus worst rel {worst_a:.2e} (tol 1e-3), "
                    f"unrolled worst rel {worst_b:.2e} (tol 1e-2), "
                    f"{elapsed:.0f}s (budget 600s)")
    assert ok, line


def test_criterion_4_demotion_efficacy(phantoms50):
    # 50 seeded 64x64 phantoms, mild harmonic corruption: Autofocusing
    # raises mean PSNR by >= 1 dB over corrupted and improves all four
    # metric means; < 30 min.
    t0 = time.perf_counter()
    spec = ExperimentSpec(
        trajectory=TrajectorySpec.make(TrajectoryKind.HARMONIC, Severity.MILD, 0),
        corruption=CorruptionConfig(),
        method=Method.AUTOFOCUSING,
        autofocus=desk_preset(120),
        seed=41,
    )
    run = run_experiment(phantoms50, spec, workers=4)
    elapsed = time.perf_counter() - t0
    assert run.failure_count == 0, [r.error for r in run.results if not r.ok]

    gains = {}
    for m in METRIC_COLUMNS:
        cor, _ = _metric_series(run.results, "corrupted", m)
        ref, _ = _metric_series(run.results, "refined", m)
        gains[m] = float(np.mean(ref) - np.mean(cor))
    ok = gains["psnr"] >= 1.0 and all(g > 0 for g in gains.values()) \
        and elapsed < 1800.0
    line = _verdict(4, "demotion efficacy", ok,
                    f"mean PSNR {gains['psnr']:+.2f} dB (need >= +1), "
                    f"deltas ssim {gains['ssim']:+.4f} vif {gains['vif']:+.4f} "
                    f"ms_ssim {gains['ms_ssim']:+.4f}, "
                    f"{elapsed:.0f}s (budget 1800s)")
    assert ok, line


def test_criterion_5_prior_benefit_ordering(tmp_path):
    # Toy training run (16 phantoms, <= 60 epochs, depth-2 net), then
    # Autofocusing+ mean PSNR >= Autofocusing on paired validation seeds,
    # with the paired one-sided t statistic reported; < 2 h.
    t0 = time.perf_counter()
    train_man = gen_phantoms(16, 64, seed=21, out_dir=str(tmp_path / "train"))
    val_man = gen_phantoms(12, 64, seed=22, out_dir=str(tmp_path / "val"))
    template = TrajectorySpec.make(TrajectoryKind.HARMONIC, Severity.MILD, 0)
    inner = AutofocusConfig(n_steps=16, lr=0.03)
    weights = str(tmp_path / "prior.bin")

    status = train_prior_cmd(
        train_man,
        TrainConfig(outer_lr=5e-4, epochs=12, inner=inner, seed=3),
        PriorNetConfig(depth=2, base_channels=4),
        template, weights)
    assert status == 0

    common = dict(trajectory=template, corruption=CorruptionConfig(),
                  autofocus=inner, seed=33)
    run_af = run_experiment(val_man, ExperimentSpec(
        method=Method.AUTOFOCUSING, **common))
    run_afp = run_experiment(val_man, ExperimentSpec(
        method=Method.AUTOFOCUSING_PLUS, prior_weights=weights, **common))
    assert run_af.failure_count == 0 and run_afp.failure_count == 0

    af, _ = _metric_series(run_af.results, "refined", "psnr")
    afp, _ = _metric_series(run_afp.results, "refined", "psnr")
    t = paired_t(run_af, run_afp, "psnr")
    elapsed = time.perf_counter() - t0
    ok = float(np.mean(afp)) >= float(np.mean(af)) and elapsed < 7200.0
    line = _verdict(5, "prior benefit ordering", ok,
                    f"AF+ mean {np.mean(afp):.3f} vs AF {np.mean(af):.3f} dB "
                    f"on 12 paired seeds; one-sided t = {t.t:.3f}, "
                    f"dof = {t.dof}, p = {t.p_value:.4g}; "
                    f"{elapsed:.0f}s (budget 7200s)")
    assert ok, line


def test_criterion_6_metric_correctness():
    # SSIM / MS-SSIM / PSNR match naive-formula oracles on 32x32 random
    # pairs (1e-8 / 1e-10; PSNR held to 1e-10 relative), and identical
    # images return the 1.0 / 1.0 / +inf sentinels.
    w32 = list(ms_ssim_weights_for(32))
    worst_ssim = worst_ms = worst_psnr = 0.0
    for seed in range(20):
        rng = np.random.default_rng([6, seed])
        ref = rng.random((32, 32))
        test = np.clip(ref + rng.normal(0.0, 0.1, (32, 32)), 0.0, None)
        worst_ssim = max(worst_ssim, abs(ssim(ref, test) - ssim_naive(ref, test)))
        worst_ms = max(worst_ms, abs(ms_ssim(ref, test, weights=w32)
                                     - ms_ssim_naive(ref, test, w32)))
        p, pn = psnr(ref, test), psnr_naive(ref, test)
        worst_psnr = max(worst_psnr, abs(p - pn) / abs(pn))
    same = np.random.default_rng(60).random((32, 32))
    sentinels = (ssim(same, same), ms_ssim(same, same, weights=w32),
                 psnr(same, same))
    ok = (worst_ssim < 1e-8 and worst_ms < 1e-10 and worst_psnr < 1e-10
          and sentinels == (1.0, 1.0, np.inf))
    line = _verdict(6, "metric correctness", ok,
                    f"worst |Δssim| {worst_ssim:.1e} (tol 1e-8), "
                    f"|Δms_ssim| {worst_ms:.1e} (tol 1e-10), "
                    f"psnr rel {worst_psnr:.1e} (tol 1e-10); "
                    f"sentinels {sentinels}")
    assert ok, line


def test_criterion_7_noise_resilience(phantoms50):
    # With 30 dB k-space noise added, the >= 1 dB PSNR improvement holds
    # on >= 80% of the 50 criterion-4 cases.
    t0 = time.perf_counter()
    spec = ExperimentSpec(
        trajectory=TrajectorySpec.make(TrajectoryKind.HARMONIC, Severity.MILD, 0),
        corruption=CorruptionConfig(noise_snr_db=30.0),
        method=Method.AUTOFOCUSING,
        autofocus=desk_preset(120),
        seed=41,
    )
    run = run_experiment(phantoms50, spec, workers=4)
    elapsed = time.perf_counter() - t0
    assert run.failure_count == 0, [r.error for r in run.results if not r.ok]
    cor, _ = _metric_series(run.results, "corrupted", "psnr")
    ref, _ = _metric_series(run.results, "refined", "psnr")
    frac = float(np.mean((ref - cor) >= 1.0))
    ok = frac >= 0.8
    line = _verdict(7, "noise resilience", ok,
                    f">= 1 dB on {frac:.0%} of 50 noisy cases (need 80%); "
                    f"mean gain {np.mean(ref - cor):+.2f} dB, {elapsed:.0f}s")
    assert ok, line


def test_criterion_8_determinism(tmp_path):
    # Two full bench runs with identical configs produce byte-identical
    # run files and reports (worker count varied to prove it is inert).
    data = tmp_path / "data"
    assert cli_main(["phantoms", "--n", "6", "--size", "64", "--seed", "77",
                     "--out-dir", str(data)]) == 0
    outs = []
    for name, workers in (("one", "2"), ("two", "1")):
        run_path = tmp_path / f"{name}.json"
        rep_path = tmp_path / f"{name}.csv"
        assert cli_main(["bench", "--manifest", str(data / "manifest.json"),
                         "--method", "autofocusing", "--kind", "harmonic",
                         "--steps", "8", "--lr", "0.03", "--seed", "3",
                         "--workers", workers, "--out", str(run_path)]) == 0
        assert cli_main(["report", "--run", str(run_path),
                         "--out", str(rep_path)]) == 0
        outs.append((run_path.read_bytes(), rep_path.read_bytes()))
    ok = outs[0] == outs[1]
    line = _verdict(8, "determinism", ok,
                    f"run bytes equal: {outs[0][0] == outs[1][0]}, "
                    f"report bytes equal: {outs[0][1] == outs[1][1]} "
                    f"(run {len(outs[0][0])} B, report {len(outs[0][1])} B)")
    assert ok, line
