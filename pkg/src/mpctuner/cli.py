"""Command-line workbench entry points.

Exit codes: 0 on success, 2 when some (but not all) regions failed in a
tuning campaign, 1 on fatal errors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import harness, plant, service
from .errors import TuningError
from .mpc import GainSet
from .surrogate import SurrogateBundle, load_samples


def _load_campaign(config):
    if config is None:
        return harness.CampaignConfig()
    return harness.CampaignConfig.from_json(config)


@click.group()
def main():
    """MPC gain-tuning workbench."""


@main.group()
def grid():
    """Operating-grid commands."""


@grid.command("build")
@click.option("--config", type=click.Path(exists=True), default=None,
              help="campaign config JSON (defaults bundled)")
@click.option("--out", type=click.Path(), default="out", show_default=True)
def grid_build(config, out):
    """Linearize and discretize every operating region."""
    cfg = _load_campaign(config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    regions = plant.build_region_grid(cfg.plant)
    plant.grid_to_json(regions, out / "grid.json")
    click.echo(f"wrote {len(regions)} regions to {out / 'grid.json'}")


@main.group()
def trajectories():
    """Candidate-trajectory commands."""


@trajectories.command("generate")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["synthetic", "closed_loop"]),
              default="synthetic", show_default=True)
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="out/trajectories",
              show_default=True)
@click.option("--synth-label/--no-synth-label", "label", default=False,
              help="also write a synthetic-labeled dataset JSONL")
def trajectories_generate(config, mode, count, seed, out, label):
    """Write step-response CSVs plus feature rows ready for labeling."""
    cfg = _load_campaign(config)
    regions = plant.build_region_grid(cfg.plant)
    rows, skipped = harness.generate_candidate_trajectories(
        regions, cfg.plant, mode=mode, count=count, seed=seed,
        window=cfg.window, horizon=cfg.horizon, out_dir=out,
    )
    out = Path(out)
    with open(out / "features.jsonl", "w") as fh:
        for tid, _, feats in rows:
            fh.write(json.dumps({"trajectory_id": tid,
                                 "features": feats.tolist()}) + "\n")
    if label:
        from .surrogate import LabeledSample, save_samples, synth_label
        samples = [LabeledSample(tid, feats, synth_label(feats), "synthetic")
                   for tid, _, feats in rows]
        save_samples(samples, out / "dataset.jsonl")
    click.echo(f"generated {len(rows)} trajectories ({skipped} faulted runs skipped)")


@main.group()
def surrogate():
    """Grading-cost surrogate commands."""


@surrogate.command("train")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--data", type=click.Path(exists=True), default=None,
              help="labeled dataset JSONL; generated synthetically when omitted")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
def surrogate_train(config, data, seed, out):
    """Train the grading-cost network and persist the bundle."""
    cfg = _load_campaign(config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if data is not None:
        samples = load_samples(data)
    else:
        regions = plant.build_region_grid(cfg.plant)
        samples = harness.build_synthetic_dataset(
            regions, cfg.plant, count=cfg.n_synthetic, seed=seed,
            window=cfg.window,
        )
    from dataclasses import replace
    bundle, metrics = harness.train_surrogate_bundle(
        samples, replace(cfg.train, seed=seed), split_seed=seed
    )
    bundle.to_json(out / "surrogate.json")
    with open(out / "surrogate_metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
    click.echo(json.dumps(metrics, indent=2))


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--region", "region_index", type=int, default=None,
              help="tune a single region")
@click.option("--all", "tune_all", is_flag=True, help="tune every region")
@click.option("--surrogate", "surrogate_path", type=click.Path(exists=True),
              default=None, help="trained surrogate bundle JSON")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--parallel", type=int, default=1, show_default=True)
def tune(config, region_index, tune_all, surrogate_path, seed, out, parallel):
    """Run the projected random search for one region or all of them."""
    if not tune_all and region_index is None:
        raise click.UsageError("pass --region <i> or --all")
    cfg = _load_campaign(config)
    if region_index is not None:
        cfg = harness.CampaignConfig.from_dict(
            {**cfg.to_dict(), "regions": [region_index]}
        )
    bundle = (SurrogateBundle.from_json(surrogate_path)
              if surrogate_path else None)
    try:
        report = harness.run_tuning_campaign(
            cfg, out, seed=seed, parallel=parallel, surrogate=bundle,
        )
    except TuningError as exc:
        click.echo(f"fatal: {exc}", err=True)
        sys.exit(1)
    failed = report["failed_regions"]
    click.echo(json.dumps({k: v for k, v in report.items() if k != "regions"},
                          indent=2))
    if failed:
        click.echo(f"regions failed: {failed}", err=True)
        sys.exit(2)


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--schedule", type=click.Path(exists=True), default=None,
              help="drive schedule CSV; bundled all-region cycle when omitted")
@click.option("--gains", "gains_dir", type=click.Path(exists=True), required=True,
              help="directory of gains_region_XX.json files")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
def simulate(config, schedule, gains_dir, seed, out):
    """Run the switched closed loop over a drive schedule and log it."""
    cfg = _load_campaign(config)
    regions = plant.build_region_grid(cfg.plant)
    if schedule is not None:
        sched = harness.DriveSchedule.from_csv(schedule)
    else:
        sched = harness.default_drive_schedule(regions)
    gains_by_region = {}
    for path in sorted(Path(gains_dir).glob("gains_region_*.json")):
        index = int(path.stem.rsplit("_", 1)[1])
        gains_by_region[index] = GainSet.from_json(path)
    touched = {plant.select_region(seg.theta, regions) for seg in sched.segments}
    missing = sorted(touched - set(gains_by_region))
    if missing:
        click.echo(f"fatal: schedule touches regions {missing} with no gains file",
                   err=True)
        sys.exit(1)
    log = harness.run_closed_loop(sched, gains_by_region, regions, cfg.plant,
                                  noise_seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    harness.log_to_csv(log, out / "closed_loop.csv")
    click.echo(f"simulated {log.t[-1]:.1f} s, {len(log.faults)} faults, "
               f"log at {out / 'closed_loop.csv'}")
    if log.faults:
        sys.exit(2)


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--trajectories", "traj_dir", type=click.Path(exists=True),
              required=True, help="directory of step-response CSVs to grade")
@click.option("--dataset", type=click.Path(), default="out/labels.jsonl",
              show_default=True, help="append-only dataset file")
@click.option("--seed-data", type=click.Path(exists=True), default=None,
              help="existing labeled JSONL to prime the acquisition ensemble")
@click.option("--retrain-every", type=int, default=25, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8571, show_default=True)
def serve(config, traj_dir, dataset, seed_data, retrain_every, host, port):
    """Serve the labeling queue over HTTP."""
    import uvicorn

    seed_samples = load_samples(seed_data) if seed_data else []
    store = service.LabelingStore(
        dataset,
        acquisition=service.EnsembleAcquisition(),
        retrain_every=retrain_every,
        seed_samples=seed_samples,
    )
    entries = service.load_trajectory_dir(traj_dir)
    store.enqueue(entries)
    click.echo(f"queued {len(entries)} trajectories; dataset at {dataset}")
    uvicorn.run(service.create_app(store), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
