"""Experiment orchestration: corrupt every image, apply a method, score it.

The harness is built around two determinism rules.  First, everything an
image sees — trajectory draw, noise draw — is derived from (experiment
seed, image id), never from global state or worker scheduling, so two runs
of the same (manifest, spec) agree byte-for-byte and two specs differing
only in method corrupt identically (paired comparisons stay paired).
Second, wall-clock timings live only on the in-memory results; serialized
runs and emitted reports never contain them.
"""

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from time import perf_counter

import numpy as np
from scipy import stats

from .autodiff import Tensor
from .autofocus import AutofocusConfig, demote, desk_preset
from .core import ComplexImage, IMAGE, fft2c
from .errors import ContractViolationError, NumericalFailureError
from .metrics import MetricBundle
from .motion import CorruptionConfig, TrajectorySpec, corrupt, gen_trajectory
from .prior import PriorNet, load_weights, save_weights
from .training import TrainConfig, train, write_log_csv

RUN_SCHEMA_VERSION = 1
SPEC_SCHEMA_VERSION = 1
METRIC_COLUMNS = ("psnr", "ssim", "vif", "ms_ssim")
REPORT_HEADERS = ("Method", "PSNR", "SSIM", "VIF", "MS-SSIM")
CORRUPTED_LABEL = "Corrupted"


class Method(Enum):
    NONE = "None"
    AUTOFOCUSING = "Autofocusing"
    AUTOFOCUSING_PLUS = "AutofocusingPlus"
    PRIOR_ONLY_DEBLUR = "PriorOnlyDeblur"


_NEEDS_WEIGHTS = (Method.AUTOFOCUSING_PLUS, Method.PRIOR_ONLY_DEBLUR)


@dataclass
class ExperimentSpec:
    """Everything a benchmark run depends on, JSON round-trippable."""

    trajectory: TrajectorySpec
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    method: Method = Method.AUTOFOCUSING
    autofocus: AutofocusConfig = field(default_factory=desk_preset)
    prior_weights: str = None
    seed: int = 0

    def __post_init__(self):
        self.method = Method(self.method)
        if not isinstance(self.trajectory, TrajectorySpec):
            raise ContractViolationError("trajectory must be a TrajectorySpec")
        if not isinstance(self.corruption, CorruptionConfig):
            raise ContractViolationError("corruption must be a CorruptionConfig")
        if not isinstance(self.autofocus, AutofocusConfig):
            raise ContractViolationError("autofocus must be an AutofocusConfig")
        if self.method in _NEEDS_WEIGHTS and not self.prior_weights:
            raise ContractViolationError(
                f"method {self.method.value} requires prior_weights")
        self.seed = int(self.seed)

    def to_json_dict(self) -> dict:
        noise = self.corruption.noise_snr_db
        return {
            "schema_version": SPEC_SCHEMA_VERSION,
            "seed": self.seed,
            "method": self.method.value,
            "trajectory": self.trajectory.to_json_dict(),
            "corruption": {
                "center_fraction": self.corruption.center_fraction,
                "noise_snr_db": None if noise is None or noise == np.inf else noise,
            },
            "autofocus": {
                "n_steps": self.autofocus.n_steps,
                "lr": self.autofocus.lr,
                "beta1": self.autofocus.beta1,
                "beta2": self.autofocus.beta2,
                "eps": self.autofocus.eps,
                "max_rotation_deg": self.autofocus.max_rotation_deg,
                "max_shift_px": self.autofocus.max_shift_px,
                "center_fraction": self.autofocus.center_fraction,
            },
            "prior_weights": self.prior_weights,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentSpec":
        version = doc.get("schema_version")
        if version != SPEC_SCHEMA_VERSION:
            raise ContractViolationError(f"unsupported spec schema_version {version!r}")
        return cls(
            trajectory=TrajectorySpec.from_json_dict(doc["trajectory"]),
            corruption=CorruptionConfig(**doc["corruption"]),
            method=Method(doc["method"]),
            autofocus=AutofocusConfig(**doc["autofocus"]),
            prior_weights=doc.get("prior_weights"),
            seed=doc["seed"],
        )


@dataclass
class ImageResult:
    image_id: int
    corrupted: MetricBundle = None
    refined: MetricBundle = None
    error: str = None
    wall_s: float = float("nan")  # in-memory only, never serialized

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class RunReport:
    spec_doc: dict
    results: list

    @property
    def n_images(self) -> int:
        return len(self.results)

    @property
    def failure_count(self) -> int:
        return sum(1 for r in self.results if not r.ok)

    @property
    def failed(self) -> bool:
        """More than 20% of images failing sinks the whole run."""
        return self.failure_count > 0.2 * self.n_images

    @property
    def method_label(self) -> str:
        return self.spec_doc["method"]

    def to_json_dict(self) -> dict:
        def bundle(b):
            if b is None:
                return None
            return {k: getattr(b, k) for k in METRIC_COLUMNS}

        return {
            "schema_version": RUN_SCHEMA_VERSION,
            "spec": self.spec_doc,
            "n_images": self.n_images,
            "failure_count": self.failure_count,
            "failed": self.failed,
            "results": [
                {"id": r.image_id, "error": r.error,
                 "corrupted": bundle(r.corrupted), "refined": bundle(r.refined)}
                for r in self.results
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunReport":
        version = doc.get("schema_version")
        if version != RUN_SCHEMA_VERSION:
            raise ContractViolationError(f"unsupported run schema_version {version!r}")

        def bundle(d):
            return None if d is None else MetricBundle(**d)

        results = [ImageResult(image_id=r["id"], corrupted=bundle(r["corrupted"]),
                               refined=bundle(r["refined"]), error=r["error"])
                   for r in doc["results"]]
        return cls(spec_doc=doc["spec"], results=results)


def save_run(run: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(run.to_json_dict(), f, indent=2)
        f.write("\n")


def load_run(path) -> RunReport:
    with open(path, "r", encoding="utf-8") as f:
        return RunReport.from_json_dict(json.load(f))


# ---------------------------------------------------------------------------
# Running an experiment
# ---------------------------------------------------------------------------

def per_image_seed(seed: int, image_id: int) -> int:
    """Stable 64-bit stream head for one image of one experiment."""
    return int(np.random.SeedSequence([int(seed), int(image_id)])
               .generate_state(1, np.uint64)[0])


def image_trajectory_spec(template: TrajectorySpec, seed: int) -> TrajectorySpec:
    """Redraw the template's kind/severity/amplitudes with a fresh seed, so
    each image gets its own waveform while staying on the template's motion
    class."""
    return TrajectorySpec.make(
        template.kind, severity=template.severity, seed=seed,
        amplitude_deg=template.amplitude_deg, amplitude_px=template.amplitude_px)


def _refine(spec: ExperimentSpec, corrupted_img: ComplexImage,
            corrupted_mag: np.ndarray, prior: PriorNet):
    if spec.method is Method.PRIOR_ONLY_DEBLUR:
        scale = prior.scale_map(Tensor(corrupted_mag)).data
        return scale * corrupted_mag
    use_prior = prior if spec.method is Method.AUTOFOCUSING_PLUS else None
    res = demote(fft2c(corrupted_img), spec.autofocus, prior=use_prior)
    return np.abs(res.refined_image.data)


def _process_image(manifest, entry, spec: ExperimentSpec, prior) -> ImageResult:
    t0 = perf_counter()
    try:
        clean = manifest.load_image(entry)
        tspec = image_trajectory_spec(spec.trajectory,
                                      per_image_seed(spec.seed, entry.id))
        traj = gen_trajectory(tspec, clean.shape[0])
        noise_rng = np.random.default_rng([spec.seed, entry.id, 1])
        corrupted_img = corrupt(ComplexImage(clean.astype(complex), IMAGE),
                                traj, spec.corruption, rng=noise_rng)
        corrupted_mag = np.abs(corrupted_img.data)
        corrupted_bundle = MetricBundle.evaluate(clean, corrupted_mag)
        refined_bundle = None
        if spec.method is not Method.NONE:
            refined_mag = _refine(spec, corrupted_img, corrupted_mag, prior)
            refined_bundle = MetricBundle.evaluate(clean, refined_mag)
        return ImageResult(entry.id, corrupted_bundle, refined_bundle,
                           wall_s=perf_counter() - t0)
    except Exception as exc:  # recorded, the run continues
        return ImageResult(entry.id, error=f"{type(exc).__name__}: {exc}",
                           wall_s=perf_counter() - t0)


def run_experiment(manifest, spec: ExperimentSpec, workers: int = None) -> RunReport:
    """Corrupt + refine + score every manifest image; ordered, deterministic.

    Images are processed by a bounded thread pool; results are reduced in
    manifest order, so worker scheduling never leaks into the report.
    """
    prior = None
    if spec.method in _NEEDS_WEIGHTS:
        prior = load_weights(spec.prior_weights)
    if workers is None:
        workers = min(4, max(1, len(manifest)))
    if workers < 1:
        raise ContractViolationError(f"workers must be >= 1, got {workers}")

    if workers == 1:
        results = [_process_image(manifest, e, spec, prior) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda e: _process_image(manifest, e, spec, prior),
                manifest.entries))
    return RunReport(spec_doc=spec.to_json_dict(), results=results)


# ---------------------------------------------------------------------------
# Statistics and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairedT:
    """One-sided paired t: positive t favors the second (b) series."""

    t: float
    dof: int
    p_value: float
    n: int


def _paired_t_from_series(a: np.ndarray, b: np.ndarray) -> PairedT:
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    n = d.size
    if n < 2:
        raise ContractViolationError("paired t needs at least two pairs")
    sd = float(np.std(d, ddof=1))
    mean = float(np.mean(d))
    if sd == 0.0:
        t = 0.0 if mean == 0.0 else float(np.sign(mean)) * float("inf")
    else:
        t = mean / (sd / np.sqrt(n))
    p = float(stats.t.sf(t, n - 1))
    return PairedT(t=float(t), dof=n - 1, p_value=p, n=n)


def _metric_series(results, stage: str, metric: str, ids=None):
    rows = [r for r in results if r.ok and getattr(r, stage) is not None]
    if ids is not None:
        rows = [r for r in rows if r.image_id in ids]
    return np.array([getattr(getattr(r, stage), metric) for r in rows]), \
        [r.image_id for r in rows]


def _output_series(run: RunReport, metric: str):
    # the no-op method's output is the corrupted image itself
    stage = "corrupted" if run.method_label == Method.NONE.value else "refined"
    return _metric_series(run.results, stage, metric)


def _output_bundles(run: RunReport):
    stage = "corrupted" if run.method_label == Method.NONE.value else "refined"
    return [getattr(r, stage) for r in run.results
            if r.ok and getattr(r, stage) is not None]


def paired_t(run_a: RunReport, run_b: RunReport, metric: str = "psnr") -> PairedT:
    """Paired one-sided t statistic that run_b beats run_a on ``metric``.

    Valid only under paired-seed discipline: both runs must cover the same
    images and have seen identical corrupted inputs, which is checked via
    the corrupted-stage metric values.  A method-None run contributes its
    corrupted series as its output (the identity restoration).
    """
    if metric not in METRIC_COLUMNS:
        raise ContractViolationError(f"unknown metric {metric!r}")
    a_vals, a_ids = _output_series(run_a, metric)
    b_vals, b_ids = _output_series(run_b, metric)
    if a_ids != b_ids:
        raise ContractViolationError(
            "paired t needs the same image set in both runs")
    for m in METRIC_COLUMNS:
        ca, ids_a = _metric_series(run_a.results, "corrupted", m, ids=set(a_ids))
        cb, _ = _metric_series(run_b.results, "corrupted", m, ids=set(a_ids))
        if not np.array_equal(ca, cb):
            raise ContractViolationError(
                "runs saw different corrupted inputs; seeds are not paired")
    return _paired_t_from_series(a_vals, b_vals)


def _groups(run: RunReport):
    """(label, rows) for each non-empty method group, corrupted first."""
    ok = [r for r in run.results if r.ok]
    groups = []
    if ok:
        groups.append((CORRUPTED_LABEL, [(r.image_id, r.corrupted) for r in ok]))
    refined = [(r.image_id, r.refined) for r in ok if r.refined is not None]
    if refined:
        groups.append((run.method_label, refined))
    return groups


def _aggregate(bundles):
    with np.errstate(invalid="ignore"):  # std over +inf sentinels is nan
        means = {m: float(np.mean([getattr(b, m) for b in bundles])) for m in METRIC_COLUMNS}
        stds = {m: float(np.std([getattr(b, m) for b in bundles])) for m in METRIC_COLUMNS}
    return means, stds


def _report_csv(run: RunReport) -> str:
    lines = [
        "# run_report_csv schema 1",
        "# spec: " + json.dumps(run.spec_doc, separators=(",", ":")),
        f"# images: {run.n_images}  failures: {run.failure_count}  "
        f"failed: {str(run.failed).lower()}",
        "method,image," + ",".join(METRIC_COLUMNS),
    ]
    for label, rows in _groups(run):
        for image_id, b in rows:
            vals = ",".join(repr(getattr(b, m)) for m in METRIC_COLUMNS)
            lines.append(f"{label},{image_id},{vals}")
        means, stds = _aggregate([b for _, b in rows])
        lines.append(f"{label},mean," + ",".join(repr(means[m]) for m in METRIC_COLUMNS))
        lines.append(f"{label},std," + ",".join(repr(stds[m]) for m in METRIC_COLUMNS))
    for r in run.results:
        if not r.ok:
            lines.append(f"# error image {r.image_id}: {r.error}")
    return "\n".join(lines) + "\n"


def _report_markdown(run: RunReport) -> str:
    traj = run.spec_doc["trajectory"]
    out = [
        "# Demotion run report",
        "",
        f"- Method: {run.method_label}",
        f"- Trajectory: {traj['kind']} / {traj['severity']}",
        f"- Images: {run.n_images} (failures: {run.failure_count}, "
        f"failed: {str(run.failed).lower()})",
        f"- Seed: {run.spec_doc['seed']}",
        "",
        "| " + " | ".join(REPORT_HEADERS) + " |",
        "|" + "|".join([" --- "] * len(REPORT_HEADERS)) + "|",
    ]
    groups = _groups(run)
    for label, rows in groups:
        means, stds = _aggregate([b for _, b in rows])
        cells = [f"{means[m]:.4f} ± {stds[m]:.4f}" for m in METRIC_COLUMNS]
        out.append("| " + " | ".join([label] + cells) + " |")
    if len(groups) == 2 and len(groups[1][1]) >= 2:
        corr = dict(groups[0][1])
        ids = [i for i, _ in groups[1][1]]
        a = [corr[i].psnr for i in ids]
        b = [bu.psnr for _, bu in groups[1][1]]
        pt = _paired_t_from_series(a, b)
        out += ["", f"Paired one-sided t ({groups[1][0]} > {CORRUPTED_LABEL}, PSNR): "
                    f"t = {pt.t:.4f}, dof = {pt.dof}, p = {pt.p_value:.3g}."]
    for r in run.results:
        if not r.ok:
            out.append(f"- error, image {r.image_id}: {r.error}")
    return "\n".join(out) + "\n"


def report(run: RunReport, format: str = "csv") -> str:
    """Render a run: per-image rows plus mean/std per method group (CSV is
    the machine-readable source of truth; markdown is the human table)."""
    if run.n_images == 0:
        raise ContractViolationError("cannot report an empty run")
    if format == "csv":
        return _report_csv(run)
    if format == "markdown":
        return _report_markdown(run)
    raise ContractViolationError(f"unknown report format {format!r}")


def compare_runs(run_a: RunReport, run_b: RunReport) -> str:
    """Markdown comparison of two paired runs with one-sided t per metric
    (positive t means the second run is better)."""
    la, lb = run_a.method_label, run_b.method_label
    out = [
        "# Paired method comparison",
        "",
        f"- A: {la} (images: {run_a.n_images}, failures: {run_a.failure_count})",
        f"- B: {lb} (images: {run_b.n_images}, failures: {run_b.failure_count})",
        "",
        "| " + " | ".join(REPORT_HEADERS) + " |",
        "|" + "|".join([" --- "] * len(REPORT_HEADERS)) + "|",
    ]
    for run, label in ((run_a, la), (run_b, lb)):
        bundles = _output_bundles(run)
        if not bundles:
            raise ContractViolationError(f"run {label} has no usable results")
        means, stds = _aggregate(bundles)
        cells = [f"{means[m]:.4f} ± {stds[m]:.4f}" for m in METRIC_COLUMNS]
        out.append("| " + " | ".join([label] + cells) + " |")
    out.append("")
    for m in METRIC_COLUMNS:
        pt = paired_t(run_a, run_b, m)
        out.append(f"- paired one-sided t ({lb} > {la}, {m}): "
                   f"t = {pt.t:.4f}, dof = {pt.dof}, p = {pt.p_value:.3g}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Training command
# ---------------------------------------------------------------------------

def _manifest_samples(manifest, template: TrajectorySpec):
    return [(manifest.load_image(e),
             image_trajectory_spec(template, per_image_seed(manifest.seed, e.id)))
            for e in manifest.entries]


def train_prior_cmd(manifest, cfg: TrainConfig, net_cfg, trajectory: TrajectorySpec,
                    out_path, log_path=None, checkpoint_path=None,
                    val_manifest=None, stream=None) -> int:
    """Train a prior on manifest phantoms; write weights + CSV log.

    Returns a process exit status: 0 on success, 1 when training aborts on
    a non-finite loss (diagnostic goes to ``stream``, default stderr).
    Training corruption seeds derive from the manifest seed, so reruns and
    resumed runs see identical data.
    """
    stream = stream if stream is not None else sys.stderr
    samples = _manifest_samples(manifest, trajectory)
    val = _manifest_samples(val_manifest, trajectory) if val_manifest is not None else ()
    # neutral head: the scale map starts flat at 0.5 so short toy runs begin
    # harmless instead of spending their whole budget unlearning a random map
    net = PriorNet(net_cfg, neutral_head(init_params(net_cfg, seed=cfg.seed)))
    try:
        result = train(net, samples, cfg, val_samples=val,
                       checkpoint_path=checkpoint_path)
    except NumericalFailureError as exc:
        print(f"training aborted: {exc}", file=stream)
        return 1
    save_weights(result.net, out_path)
    if log_path is None:
        log_path = str(out_path) + ".log.csv"
    write_log_csv(result.log, log_path)
    return 0
