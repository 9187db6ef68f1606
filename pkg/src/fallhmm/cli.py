"""Command-line front end: synth, extract, tune, train, evaluate, inject, diagnose.

Every subcommand takes an explicit ``--seed`` (no wall-clock defaults), writes
all artifacts under ``--out``, and echoes the effective configuration into
``run_config.json`` so any published number can be regenerated.  Values from
``--config`` (a flat JSON file whose keys mirror the flags) are overridden by
flags given on the command line.  Exit codes: 0 success, 1 computation
failure, 2 usage or configuration error.
"""

import json
import logging
import os
from pathlib import Path

import click
import numpy as np

from . import FALL_LABEL, __version__
from .dsp import (
    DEFAULT_CUTOFF_HZ,
    DEFAULT_FILTER_ORDER,
    DEFAULT_FRAME_S,
    DEFAULT_OVERLAP,
    lowpass_filter,
    make_frames,
    make_windows,
)
from .evaluation import (
    DEFAULT_INJECTION_COUNTS,
    PipelineConfig,
    WindowObs,
    fall_injection_curve,
    generate_synthetic,
    default_synth_config,
    loocv,
    outlier_vs_fall_diagnostic,
    windows_from_csv,
    windows_to_csv,
    subjects_of,
    _train_detector,
)
from .features import extract
from .hmm import TrainConfig
from .ingest import SCHEMAS, IngestError, load_dataset
from .models import SUPERVISED_VARIANTS, VARIANTS, XFACTOR_VARIANTS
from .tuning import (
    DEFAULT_CV_FOLDS,
    DEFAULT_OMEGA,
    DEFAULT_XI_GRID,
)

logger = logging.getLogger(__name__)


def _parse_grid(value):
    try:
        grid = tuple(float(v) for v in str(value).split(","))
    except ValueError:
        raise click.UsageError(f"cannot parse xi grid {value!r}; expected e.g. 1.5,5,10,100")
    if not grid or any(x < 1 for x in grid):
        raise click.UsageError("xi grid values must be >= 1")
    return grid


def _merged(ctx, config_path, **flags):
    """Config-file values overridden by flags given explicitly on the command line."""
    effective = dict(flags)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"cannot read config file {config_path}: {exc}")
        unknown = set(loaded) - set(flags)
        if unknown:
            raise click.UsageError(f"unknown config keys {sorted(unknown)}")
        for key, value in loaded.items():
            source = ctx.get_parameter_source(key)
            if source is None or source.name != "COMMANDLINE":
                effective[key] = value
    if effective.get("seed") is None:
        raise click.UsageError("--seed is required (set it on the command line or in the config file)")
    return effective


class _Artifacts:
    """Tracks files written by one subcommand; removes them all on failure."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.paths = []

    def path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def write_config(self, effective):
        # the output directory is where the config lives, not part of the run
        clean = {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in effective.items() if k != "out"}
        self.path("run_config.json").write_text(json.dumps(clean, sort_keys=True, indent=2) + "\n")

    def discard(self):
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


def _run(effective, out, body):
    """Write artifacts, removing partial output and exiting 1 on failure."""
    art = _Artifacts(out)
    try:
        body(art)
        art.write_config(effective)
    except (click.UsageError, click.Abort):
        art.discard()
        raise
    except Exception as exc:
        art.discard()
        raise click.ClickException(str(exc))


def _load_windows(path):
    path = Path(path)
    if not path.exists():
        raise click.UsageError(f"dataset path {path} does not exist")
    try:
        return windows_from_csv(path)
    except (OSError, ValueError, KeyError) as exc:
        raise click.UsageError(f"cannot read dataset {path}: {exc}")


def _pipeline_config(effective):
    return PipelineConfig(
        n_states=int(effective["n_states"]),
        omega=float(effective["omega"]),
        xi_grid=_parse_grid(effective["xi_grid"]),
        k_folds=int(effective["cv_folds"]),
        seed=int(effective["seed"]),
        train=TrainConfig(seed=int(effective["seed"])),
    )


def _check_variant(variant, allowed):
    if variant not in allowed:
        raise click.UsageError(f"variant must be one of {', '.join(allowed)}; got {variant!r}")


@click.group()
@click.version_option(__version__)
def main():
    """Fall detection from wearable inertial sensors with X-factor HMMs."""
    logging.basicConfig(level=os.environ.get("FALLHMM_LOG", "WARNING"))


_common = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="Flat JSON config file; flags override its values."),
    click.option("--seed", type=int, default=None, help="Random seed (mandatory)."),
    click.option("--out", type=click.Path(), default="out", show_default=True,
                 help="Output directory."),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def pipeline_options(fn):
    for opt in reversed([
        click.option("--n-states", type=int, default=4, show_default=True),
        click.option("--omega", type=float, default=DEFAULT_OMEGA, show_default=True),
        click.option("--xi-grid", default=",".join(str(x) for x in DEFAULT_XI_GRID),
                     show_default=True, help="Comma-separated inflation candidates."),
        click.option("--cv-folds", type=int, default=DEFAULT_CV_FOLDS, show_default=True),
        click.option("--jobs", type=int, default=None,
                     help="Parallel fold workers [default: all cores]."),
    ]):
        fn = opt(fn)
    return fn


@main.command()
@common_options
@click.option("--subjects", type=int, default=5, show_default=True)
@click.option("--windows-per-subject", type=int, default=120, show_default=True)
@click.option("--activities", type=int, default=3, show_default=True)
@click.option("--frames-per-window", type=int, default=8, show_default=True)
@click.option("--fall-prevalence", type=float, default=0.05, show_default=True)
@click.option("--artifact-rate", type=float, default=0.03, show_default=True)
@click.pass_context
def synth(ctx, config_path, seed, out, subjects, windows_per_subject, activities,
          frames_per_window, fall_prevalence, artifact_rate):
    """Generate a seeded synthetic window dataset with ground-truth labels."""
    eff = _merged(ctx, config_path, seed=seed, out=out, subjects=subjects,
                  windows_per_subject=windows_per_subject, activities=activities,
                  frames_per_window=frames_per_window, fall_prevalence=fall_prevalence,
                  artifact_rate=artifact_rate)

    def body(art):
        cfg = default_synth_config(
            n_activities=int(eff["activities"]),
            n_subjects=int(eff["subjects"]),
            windows_per_subject=int(eff["windows_per_subject"]),
            frames_per_window=int(eff["frames_per_window"]),
            fall_prevalence=float(eff["fall_prevalence"]),
            artifact_rate=float(eff["artifact_rate"]),
        )
        dataset = generate_synthetic(cfg, seed=int(eff["seed"]))
        windows_to_csv(art.path("dataset.csv"), dataset)
        click.echo(f"wrote {len(dataset)} windows for {len(subjects_of(dataset))} subjects")

    _run(eff, eff["out"], body)


@main.command()
@common_options
@click.option("--dataset", type=click.Path(), required=True, help="Raw recording directory.")
@click.option("--schema", type=click.Choice(SCHEMAS), default="generic-csv", show_default=True)
@click.option("--window-s", type=float, default=1.28, show_default=True)
@click.option("--overlap", type=float, default=DEFAULT_OVERLAP, show_default=True)
@click.option("--frame-ms", type=float, default=DEFAULT_FRAME_S * 1000, show_default=True)
@click.option("--cutoff-hz", type=float, default=DEFAULT_CUTOFF_HZ, show_default=True)
@click.option("--filter-order", type=int, default=DEFAULT_FILTER_ORDER, show_default=True)
@click.pass_context
def extract_cmd(ctx, config_path, seed, out, dataset, schema, window_s, overlap,
                frame_ms, cutoff_hz, filter_order):
    """Filter, window and featurize raw recordings into a window dataset CSV."""
    eff = _merged(ctx, config_path, seed=seed, out=out, dataset=dataset, schema=schema,
                  window_s=window_s, overlap=overlap, frame_ms=frame_ms,
                  cutoff_hz=cutoff_hz, filter_order=filter_order)
    if not Path(eff["dataset"]).exists():
        raise click.UsageError(f"dataset path {eff['dataset']} does not exist")

    def body(art):
        try:
            streams = load_dataset(eff["dataset"], eff["schema"])
        except IngestError as exc:
            raise click.UsageError(str(exc))
        windows_out = []
        order = {}
        for stream in streams:
            filtered = lowpass_filter(stream, float(eff["cutoff_hz"]), int(eff["filter_order"]))
            for w in make_windows(filtered, float(eff["window_s"]), float(eff["overlap"])):
                frames = make_frames(w, float(eff["frame_ms"]) / 1000.0)
                feats = np.stack([extract(f.accel, f.gyro) for f in frames])
                k = order.get(w.subject_id, 0)
                order[w.subject_id] = k + 1
                windows_out.append(WindowObs(subject_id=w.subject_id, order=k,
                                             label=w.label, frames=feats))
        if not windows_out:
            raise click.ClickException("no windows produced; recordings are too short")
        windows_to_csv(art.path("features.csv"), windows_out)
        click.echo(f"wrote {len(windows_out)} windows from {len(streams)} recordings")

    _run(eff, eff["out"], body)


main.add_command(extract_cmd, name="extract")


@main.command()
@common_options
@pipeline_options
@click.option("--dataset", type=click.Path(), required=True, help="Window dataset CSV.")
@click.option("--variant", default="xhmm2", show_default=True)
@click.pass_context
def tune(ctx, config_path, seed, out, n_states, omega, xi_grid, cv_folds, jobs,
         dataset, variant):
    """Proxy-outlier split plus cross-validated inflation-factor selection."""
    eff = _merged(ctx, config_path, seed=seed, out=out, n_states=n_states, omega=omega,
                  xi_grid=xi_grid, cv_folds=cv_folds, jobs=jobs, dataset=dataset,
                  variant=variant)
    _check_variant(eff["variant"], XFACTOR_VARIANTS)
    windows = _load_windows(eff["dataset"])
    cfg = _pipeline_config(eff)

    def body(art):
        from dataclasses import replace

        from .evaluation import _fit_standardizer, _group_pose, _runs_by_activity
        from .tuning import select_xi, split_outliers

        normal = [w for w in windows if w.label != FALL_LABEL]
        level = "window" if eff["variant"] == "xhmm3" else "frame"
        std = _fit_standardizer(normal, level, cfg)
        if eff["variant"] == "xhmm3":
            per_activity = _runs_by_activity(normal, std, cfg)
        else:
            per_activity = _group_pose(normal, std, cfg)
        tcfg = replace(cfg.train, seed=cfg.seed)
        split = split_outliers(per_activity, cfg.omega, cfg.n_states, tcfg)
        sel = select_xi(eff["variant"], split, cfg.xi_grid, cfg.k_folds,
                        cfg.seed, cfg.n_states, tcfg)
        with open(art.path("xi_trace.csv"), "w", newline="") as fh:
            fh.write("variant,xi,fold,gmean\n")
            for xi, fold, g in sel.trace:
                fh.write(f"{eff['variant']},{xi!r},{fold},{g!r}\n")
        art.path("xi_selection.json").write_text(json.dumps({
            "variant": eff["variant"],
            "chosen_xi": sel.chosen_xi,
            "mean_gmean": {repr(k): v for k, v in sel.mean_gmean.items()},
            "n_outliers": len(split.outliers),
        }, sort_keys=True, indent=2) + "\n")
        click.echo(f"chosen xi = {sel.chosen_xi}")

    _run(eff, eff["out"], body)


@main.command()
@common_options
@pipeline_options
@click.option("--dataset", type=click.Path(), required=True, help="Window dataset CSV.")
@click.option("--variant", default="xhmm2", show_default=True)
@click.pass_context
def train(ctx, config_path, seed, out, n_states, omega, xi_grid, cv_folds, jobs,
          dataset, variant):
    """Train one detector on the full dataset and serialize it."""
    eff = _merged(ctx, config_path, seed=seed, out=out, n_states=n_states, omega=omega,
                  xi_grid=xi_grid, cv_folds=cv_folds, jobs=jobs, dataset=dataset,
                  variant=variant)
    _check_variant(eff["variant"], VARIANTS)
    windows = _load_windows(eff["dataset"])
    cfg = _pipeline_config(eff)

    def body(art):
        normal = [w for w in windows if w.label != FALL_LABEL]
        falls = [w for w in windows if w.label == FALL_LABEL]
        detector, std, chosen_xi = _train_detector(eff["variant"], normal, falls, cfg)
        d = detector.to_dict()
        d["standardizer"] = std.to_dict()
        d["chosen_xi"] = chosen_xi
        art.path(f"detector_{eff['variant']}.json").write_text(
            json.dumps(d, sort_keys=True, indent=2) + "\n")
        click.echo(f"trained {eff['variant']}"
                   + (f" (xi={chosen_xi})" if chosen_xi is not None else ""))

    _run(eff, eff["out"], body)


@main.command()
@common_options
@pipeline_options
@click.option("--dataset", type=click.Path(), required=True, help="Window dataset CSV.")
@click.option("--variant", "variants", multiple=True, default=("xhmm2",),
              show_default=True, help="Detector variant (repeatable).")
@click.pass_context
def evaluate(ctx, config_path, seed, out, n_states, omega, xi_grid, cv_folds, jobs,
             dataset, variants):
    """Leave-one-subject-out evaluation; one report per variant."""
    eff = _merged(ctx, config_path, seed=seed, out=out, n_states=n_states, omega=omega,
                  xi_grid=xi_grid, cv_folds=cv_folds, jobs=jobs, dataset=dataset,
                  variants=list(variants))
    for v in eff["variants"]:
        _check_variant(v, VARIANTS)
    windows = _load_windows(eff["dataset"])
    cfg = _pipeline_config(eff)
    jobs_n = int(eff["jobs"]) if eff["jobs"] else (os.cpu_count() or 1)

    def body(art):
        for v in eff["variants"]:
            report = loocv(windows, v, cfg, jobs=jobs_n)
            art.path(f"report_{v}.json").write_text(report.to_json() + "\n")
            report.write_csv(art.path(f"folds_{v}.csv"))
            s = report.summary()
            click.echo(f"{v}: gmean={s['gmean']} fdr={s['fdr']} far={s['far']}")

    _run(eff, eff["out"], body)


@main.command()
@common_options
@pipeline_options
@click.option("--dataset", type=click.Path(), required=True, help="Window dataset CSV.")
@click.option("--variant", default="hmm3_sup", show_default=True)
@click.option("--counts", default=",".join(str(c) for c in DEFAULT_INJECTION_COUNTS),
              show_default=True, help="Comma-separated training fall counts.")
@click.option("--repeats", type=int, default=10, show_default=True)
@click.pass_context
def inject(ctx, config_path, seed, out, n_states, omega, xi_grid, cv_folds, jobs,
           dataset, variant, counts, repeats):
    """Fall-injection curve: metrics as the number of training falls grows."""
    eff = _merged(ctx, config_path, seed=seed, out=out, n_states=n_states, omega=omega,
                  xi_grid=xi_grid, cv_folds=cv_folds, jobs=jobs, dataset=dataset,
                  variant=variant, counts=counts, repeats=repeats)
    _check_variant(eff["variant"], SUPERVISED_VARIANTS)
    try:
        count_list = tuple(int(c) for c in str(eff["counts"]).split(","))
    except ValueError:
        raise click.UsageError(f"cannot parse counts {eff['counts']!r}")
    windows = _load_windows(eff["dataset"])
    cfg = _pipeline_config(eff)
    jobs_n = int(eff["jobs"]) if eff["jobs"] else (os.cpu_count() or 1)

    def body(art):
        curve = fall_injection_curve(windows, eff["variant"], counts=count_list,
                                     repeats=int(eff["repeats"]), seed=int(eff["seed"]),
                                     config=cfg, jobs=jobs_n)
        with open(art.path(f"injection_{eff['variant']}.csv"), "w", newline="") as fh:
            fh.write("count,mean_gmean,std_gmean,mean_fdr,mean_far\n")
            for p in curve:
                fh.write(f"{p.count},{p.mean_gmean!r},{p.std_gmean!r},"
                         f"{p.mean_fdr!r},{p.mean_far!r}\n")
        click.echo(f"wrote {len(curve)} curve points")

    _run(eff, eff["out"], body)


@main.command()
@common_options
@pipeline_options
@click.option("--dataset", type=click.Path(), required=True, help="Window dataset CSV.")
@click.option("--variant", default="hmm2_sup", show_default=True)
@click.pass_context
def diagnose(ctx, config_path, seed, out, n_states, omega, xi_grid, cv_folds, jobs,
             dataset, variant):
    """How fall-like are the rejected training outliers, per source activity."""
    eff = _merged(ctx, config_path, seed=seed, out=out, n_states=n_states, omega=omega,
                  xi_grid=xi_grid, cv_folds=cv_folds, jobs=jobs, dataset=dataset,
                  variant=variant)
    _check_variant(eff["variant"], ("hmm1_sup", "hmm2_sup"))
    windows = _load_windows(eff["dataset"])
    cfg = _pipeline_config(eff)

    def body(art):
        fractions = outlier_vs_fall_diagnostic(windows, eff["variant"], cfg)
        art.path("diagnostic.json").write_text(
            json.dumps({"variant": eff["variant"], "flagged_fraction": fractions},
                       sort_keys=True, indent=2) + "\n")
        for activity, frac in fractions.items():
            click.echo(f"{activity}: {frac:.3f} of rejected outliers classified as fall")

    _run(eff, eff["out"], body)


if __name__ == "__main__":
    main()
