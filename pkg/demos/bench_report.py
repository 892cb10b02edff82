"""Benchmark two methods on a small dataset and print the comparison report.

Generates a phantom dataset, runs the no-op baseline and the autofocusing
method against identical per-image corruptions (paired seeds), and prints
the markdown report with the paired one-sided t statistic.
"""

import tempfile

from demotion import (
    CorruptionConfig,
    ExperimentSpec,
    Method,
    Severity,
    TrajectoryKind,
    TrajectorySpec,
    compare_runs,
    desk_preset,
    gen_phantoms,
    report,
    run_experiment,
)


def main():
    with tempfile.TemporaryDirectory() as tmp:
        manifest = gen_phantoms(6, 64, seed=17, out_dir=tmp)
        print(f"dataset: {len(manifest)} phantoms, 64x64, seed {manifest.seed}")

        template = TrajectorySpec.make(TrajectoryKind.HARMONIC, Severity.MILD, 0)
        common = dict(trajectory=template, corruption=CorruptionConfig(),
                      autofocus=desk_preset(60), seed=5)
        run_none = run_experiment(manifest, ExperimentSpec(method=Method.NONE, **common))
        run_af = run_experiment(manifest, ExperimentSpec(method=Method.AUTOFOCUSING, **common))

    print()
    print(report(run_af, format="markdown"))
    print(compare_runs(run_none, run_af))


if __name__ == "__main__":
    main()
