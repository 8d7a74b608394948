import json
import sys

import click

from app.services.action_runner import execute_action
from app.services.core import ExitCode


def run(action_id, config, overrides):
    outcome = execute_action(action_id=action_id, config_path=config, config_overrides=overrides)
    if outcome.ok:
        click.echo(json.dumps(outcome.result, indent=2, default=str))
    else:
        click.echo(f"{action_id} failed (exit {int(outcome.exit_code)}): {outcome.error}", err=True)
    sys.exit(int(outcome.exit_code))


def common_options(func):
    func = click.option("--out", "output_dir", default=None, help="Output directory for artifacts.")(func)
    func = click.option("--seed", type=int, default=None, help="Random seed (noise, randomized checks).")(func)
    func = click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                        help="key=value run configuration file.")(func)
    return func


class ExitCodeGroup(click.Group):
    """Usage errors exit with the usage code instead of click's default 2."""

    def main(self, *args, standalone_mode=True, **kwargs):
        try:
            return super().main(*args, standalone_mode=False, **kwargs)
        except click.ClickException as e:
            e.show()
            sys.exit(int(ExitCode.USAGE))
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(int(ExitCode.USAGE))


@click.group(cls=ExitCodeGroup)
def cli():
    """Identification of limit-cycle models from sampled trajectories."""


@cli.command()
@common_options
def synth(config, seed, output_dir):
    """Generate a synthetic record (data.csv, truth.csv)."""
    run("synth", config, {"seed": seed, "output_dir": output_dir})


@cli.command()
@common_options
@click.option("--kind", type=click.Choice(["eq", "rie", "trie"]), default=None, help="Identification objective.")
def fit(config, seed, output_dir, kind):
    """Fit a model (model.json, report.json, costs.csv)."""
    run("fit", config, {"seed": seed, "output_dir": output_dir, "fit.kind": kind})


@cli.command(name="eval")
@common_options
@click.option("--horizon", type=float, default=None, help="Simulation horizon in seconds.")
def evaluate(config, seed, output_dir, horizon):
    """Simulate a saved model against data (eval_report.json, traces.csv)."""
    run("eval", config, {"seed": seed, "output_dir": output_dir, "eval.horizon": horizon})


@cli.command()
@common_options
def verify(config, seed, output_dir):
    """Run the numerical property checks (verify.json)."""
    run("verify", config, {"seed": seed, "output_dir": output_dir})


if __name__ == "__main__":
    cli()
