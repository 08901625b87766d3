"""``relaxed-e3`` command line: ``run``, ``audit``, ``gen`` and ``spec``.

Exit codes: 0 success, 1 bad configuration or input, 2 runtime or numerical failure.
Outputs go to ``--out``; without it, to ``$RELAXED_E3_OUT/<experiment>-seed<seed>``
(``./runs`` when the variable is unset).
"""
from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import analysis, experiments, serialization
from .irreps import random_group_element
from .network import Graph, NetworkSpec, equivariance_error
from .serialization import CheckpointError, OutputError
from .training import TrainConfig, TrainingDiverged, dataset_mse, train

log = logging.getLogger("relaxed_e3")

OUT_ENV = "RELAXED_E3_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV) or "runs")


@dataclass
class RunConfig:
    experiment: str
    train: TrainConfig
    out: Path
    spec_path: Optional[Path] = None
    frozen: bool = False
    threshold: float = analysis.DEFAULT_THRESHOLD
    absolute: bool = False
    grid_points: int = analysis.GRID_POINTS
    extra: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.train.seed


def run_experiment(cfg: RunConfig) -> dict:
    """Generate data, train, analyze and write every output file; returns the summary."""
    family = experiments.experiment_family(cfg.experiment)
    spec = serialization.read_spec(cfg.spec_path) if cfg.spec_path else experiments.default_network(cfg.experiment)
    if cfg.frozen:
        spec = spec.with_frozen_relaxed()
    samples, record = experiments.make_dataset(cfg.experiment, cfg.seed)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    serialization.write_text(out / "network.yaml", serialization.dump_spec(spec))
    serialization.write_json(out / f"dataset-{family}.json", record, f"{family}_dataset")

    every = max(1, cfg.train.epochs // 10)

    def progress(epoch, loss):
        if (epoch + 1) % every == 0:
            log.info("epoch %d/%d loss %.3e", epoch + 1, cfg.train.epochs, loss)

    state = train(spec, samples, cfg.train, callback=progress)
    mse = dataset_mse(spec, state.params, samples)
    if not np.isfinite(mse):
        raise TrainingDiverged("final loss is not finite")

    serialization.save_checkpoint(out / "checkpoint.json", spec, state.params, cfg.train.to_dict(), state.history)
    serialization.write_text(out / "loss.csv", "epoch,loss\n" + "".join(
        f"{i},{h!r}\n" for i, h in enumerate(state.history)))

    summary = {
        "experiment": cfg.experiment, "seed": cfg.seed, "train": cfg.train.to_dict(),
        "frozen": cfg.frozen, "final_loss": mse, "num_params": spec.num_params(),
    }
    thetas = analysis.layer_thetas(spec, state.params)
    if thetas:
        table = analysis.sparsity(thetas, cfg.threshold, relative=not cfg.absolute)
        serialization.write_json(out / "sparsity.json", table.to_dict(), "sparsity")
        serialization.write_text(out / "sparsity.csv", table.to_csv())
        report = analysis.signal_report(thetas, cfg.grid_points)
        serialization.write_json(out / "signals.json", report.to_dict(), "signals")
        serialization.write_text(out / "signals.csv", report.to_csv())
        if report.grid is not None:
            for i in range(len(thetas)):
                serialization.write_text(out / f"grid-layer{i}.csv", report.grid_csv(i))
        summary["nonzero_blocks"] = table.nonzero()
        summary["verdict"] = report.verdicts[-1]
    if family == "em" and thetas:
        fields = experiments.extract_fields(thetas[-1], samples)
        fields["E_true"] = record["E"]
        fields["B_true"] = record["B"]
        serialization.write_json(out / "fields.json", fields, "fields")
        summary["E_pred"] = fields["E_pred"].tolist()
        summary["B_pred"] = fields["B_pred"].tolist()
    serialization.write_json(out / "summary.json", summary, "summary")
    return summary


def audit_checkpoint(path, samples: int = 100, seed: int = 0, nodes: int = 4) -> dict:
    """Equivariance error over ``samples`` random O(3) elements on a random graph."""
    if samples < 1:
        raise ValueError("need ≥ 1 sample")
    spec, params, _ = serialization.load_checkpoint(path)
    graph = random_graph(spec, np.random.default_rng(seed), nodes)
    rng = np.random.default_rng(seed + 1)
    errors = [equivariance_error(spec, params, graph, random_group_element(rng)) for _ in range(samples)]
    norms = []
    for theta in analysis.layer_thetas(spec, params):
        norms.append({str(ir): float(np.linalg.norm(v)) for ir, v in theta.blocks().items()})
    return {"samples": samples, "seed": seed, "max_error": float(np.max(errors)),
            "mean_error": float(np.mean(errors)), "theta_norms": norms}


def random_graph(spec: NetworkSpec, rng, nodes: int = 4) -> Graph:
    """A few nodes inside the radial cutoff, fully connected, random features."""
    positions = rng.uniform(-0.3, 0.3, size=(nodes, 3))
    features = rng.normal(size=(nodes, spec.irreps_in.dim))
    attrs = None if spec.irreps_attr is None else rng.normal(size=(nodes, spec.irreps_attr.dim))
    return Graph.radius_graph(positions, features, np.inf, attrs)


# -- click surface ----------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log training progress to stderr.")
def cli(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)


def _resolve_out(out, experiment, seed) -> Path:
    return Path(out) if out else output_root() / f"{experiment}-seed{seed}"


@cli.command()
@click.option("--experiment", "-e", required=True, type=click.Choice(experiments.EXPERIMENTS))
@click.option("--epochs", type=int, help="Default: 2500 (shape) / 5000 (em-field).")
@click.option("--lr", type=float, help="Default: 5e-3 (shape) / 1e-3 (em-field).")
@click.option("--lambda", "lam", type=float, help="Relaxed-weight penalty. Default: 1e-6 / 1e-4.")
@click.option("--batch", type=int, help="Batch size. Default: full batch (shape) / 50 (em-field).")
@click.option("--optimizer", type=click.Choice(["sgd", "adam"]), help="Default: sgd (shape) / adam (em-field).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), help="Network YAML (see `spec`).")
@click.option("--out", type=click.Path(file_okay=False), help=f"Output directory (default ${OUT_ENV}/...).")
@click.option("--frozen", is_flag=True, help="Keep theta at its scalar init (equivariant baseline).")
@click.option("--threshold", type=float, default=analysis.DEFAULT_THRESHOLD, show_default=True,
              help="Sparsity cutoff, relative to the largest |theta| unless --absolute.")
@click.option("--absolute", is_flag=True, help="Treat --threshold as an absolute cutoff.")
def run(experiment, epochs, lr, lam, batch, optimizer, seed, spec_path, out, frozen, threshold, absolute):
    """Train one experiment and write its results."""
    defaults = dict(experiments.DEFAULTS[experiments.experiment_family(experiment)])
    overrides = {"epochs": epochs, "lr": lr, "lam": lam, "batch_size": batch, "optimizer": optimizer}
    defaults.update({k: v for k, v in overrides.items() if v is not None})
    if batch is not None and batch < 1:
        raise ConfigError("--batch must be >= 1")
    if not threshold > 0:
        raise ConfigError("--threshold must be positive")
    if spec_path and not Path(spec_path).is_file():
        raise ConfigError(f"network spec {spec_path} does not exist")
    try:
        train_cfg = TrainConfig(seed=seed, **defaults)
        cfg = RunConfig(experiment, train_cfg, _resolve_out(out, experiment, seed),
                        Path(spec_path) if spec_path else None, frozen, threshold, absolute)
        if cfg.spec_path:
            serialization.read_spec(cfg.spec_path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    summary = run_experiment(cfg)
    click.echo(f"experiment   {experiment} (seed {seed}{', frozen theta' if frozen else ''})")
    click.echo(f"final mse    {summary['final_loss']:.3e}")
    if "verdict" in summary:
        click.echo(f"verdict      {summary['verdict']}")
        click.echo(f"nonzero      {' '.join(summary['nonzero_blocks'])}")
    if "E_pred" in summary:
        click.echo(f"E_pred       {np.round(summary['E_pred'], 4).tolist()}")
        click.echo(f"B_pred       {np.round(summary['B_pred'], 4).tolist()}")
    click.echo(f"outputs      {cfg.out}")


@cli.command()
@click.argument("checkpoint", type=click.Path())
@click.option("--samples", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Also write the report as JSON.")
def audit(checkpoint, samples, seed, out):
    """Measure the equivariance error of a checkpoint."""
    if samples < 1:
        raise ConfigError("need ≥ 1 sample")
    try:
        report = audit_checkpoint(checkpoint, samples, seed)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    click.echo(f"max error    {report['max_error']:.3e}")
    click.echo(f"mean error   {report['mean_error']:.3e}")
    for i, norms in enumerate(report["theta_norms"]):
        click.echo(f"layer {i} |theta|  " + "  ".join(f"{k}={v:.3g}" for k, v in norms.items()))
    if out:
        serialization.write_json(out, report, "audit")


@cli.command()
@click.option("--experiment", "-e", required=True, type=click.Choice(experiments.EXPERIMENTS))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Dataset JSON path.")
def gen(experiment, seed, out):
    """Write an experiment's dataset as JSON."""
    family = experiments.experiment_family(experiment)
    _, record = experiments.make_dataset(experiment, seed)
    path = Path(out) if out else _resolve_out(None, experiment, seed) / f"dataset-{family}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    serialization.write_json(path, record, f"{family}_dataset")
    click.echo(str(path))


@cli.command("spec")
@click.option("--experiment", "-e", required=True, type=click.Choice(experiments.EXPERIMENTS))
def spec_cmd(experiment):
    """Print the default network config for an experiment as YAML."""
    click.echo(serialization.dump_spec(experiments.default_network(experiment)), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="relaxed-e3", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_RUNTIME
    except click.ClickException as exc:
        # usage errors included: all bad input maps to one exit code
        exc.show()
        return EXIT_CONFIG
    except (TrainingDiverged, OutputError, FloatingPointError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    except OSError as exc:
        click.echo(f"I/O error: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
