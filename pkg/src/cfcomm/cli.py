"""Command line entry point: ``cfcomm simulate|analyze|sweep|tune``.

Exit codes: 0 ok, 2 usage error, 3 resource guard tripped, 4 tuner did not
converge.
"""

from __future__ import annotations

import functools
import os
import sys

import click

from . import __version__
from .counterfactuality import ResourceError
from .harness import (
    ANALYSES,
    OUTPUT_DIR_ENV,
    ExperimentConfig,
    UsageError,
    compute_rows,
    config_record,
    make_config,
    output_target,
    render_csv,
    render_json,
    sweep_rows,
    sweep_summary,
)
from .optics import StructuralError
from .tuner import DomainError, Objective, TuneProblem, default_seeds, evaluate, solve_equal_loss

EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_NO_CONVERGENCE = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UsageError as e:
            _fail(EXIT_USAGE, str(e))
        except (DomainError, StructuralError) as e:
            _fail(EXIT_USAGE, str(e))
        except ResourceError as e:
            _fail(EXIT_RESOURCE, str(e))

    return wrapper


def experiment_options(fn):
    options = [
        click.option("--config", "config_file", type=click.File("r"), help="Flat key = value config file; flags win."),
        click.option("--protocol", type=click.Choice(["ev", "noh", "zeno", "salih", "vaidman", "nested"])),
        click.option("--outer", "--m", "outer", type=int, help="Salih outer cycles M."),
        click.option("--inner", "--n", "inner", type=int, help="Salih inner cycles N, Zeno steps N, or Vaidman inner MZI count."),
        click.option("--polarized/--unpolarized", default=None, help="Salih variant."),
        click.option("--bob", help="Bob's action: block, open, both, or a family name (live, dud, absorb, reflect)."),
        click.option("--bomb", type=click.Choice(["live", "dud", "both"]), help="Bomb tester alias for --bob."),
        click.option("--light", type=click.Choice(["fock", "classical"])),
        click.option("--analyses", help=f"Comma list from {','.join(ANALYSES)}."),
        click.option("--postselect", help="Terminal label to post-select on."),
        click.option("--epsilon", type=float, help="Weak-trace presence threshold."),
        click.option("--bs-params", help="Comma list of Vaidman beamsplitter angles."),
        click.option("--split", type=float, help="Noh or nested outer splitter angle."),
        click.option("--format", "fmt", type=click.Choice(["json", "csv"])),
        click.option("--output", type=click.Path(dir_okay=False), help=f"Output file (default: ${OUTPUT_DIR_ENV} or stdout)."),
        click.option("--jobs", type=int, help="Worker processes for sweeps."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _overrides(kw: dict) -> dict:
    keys = {
        "protocol": "protocol",
        "outer": "outer",
        "inner": "inner",
        "polarized": "polarized",
        "bob": "bob",
        "bomb": "bomb",
        "light": "light",
        "analyses": "analyses",
        "postselect": "postselect",
        "epsilon": "epsilon",
        "bs_params": "bs_params",
        "split": "split",
        "fmt": "output.format",
        "output": "output.path",
        "jobs": "jobs",
        "sweep_param": "sweep.param",
        "sweep_values": "sweep.values",
    }
    return {keys[k]: v for k, v in kw.items() if k in keys and v is not None}


def _load(kw: dict, default_analyses: str) -> ExperimentConfig:
    text = kw["config_file"].read() if kw.get("config_file") else None
    overrides = _overrides(kw)
    base = {"analyses": default_analyses}
    base.update(overrides)
    if text and "analyses" not in overrides and _file_has(text, "analyses"):
        base.pop("analyses")
    return make_config(text, base)


def _file_has(text: str, key: str) -> bool:
    return any(line.split("#", 1)[0].split("=", 1)[0].strip() == key for line in text.splitlines() if "=" in line)


def _emit(text: str, target: str | None) -> None:
    if target is None:
        click.echo(text, nl=False)
        return
    parent = os.path.dirname(target)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _report(command: str, config: ExperimentConfig, rows, summary=None) -> None:
    if config.format == "csv":
        text = render_csv(rows, config.analyses, sweep=summary is not None)
    else:
        payload = {"command": command, "config": config_record(config), "rows": rows}
        if summary is not None:
            payload["summary"] = summary
        text = render_json(payload)
    _emit(text, output_target(config.path, command, config.protocol, config.format))


@click.group()
@click.version_option(__version__)
def main():
    """Simulate counterfactual communication protocols."""


@main.command()
@experiment_options
@_guarded
def simulate(**kw):
    """Outcome probabilities for each Bob action."""
    config = _load(kw, "outcomes")
    _report("simulate", config, compute_rows(config))


@main.command()
@experiment_options
@_guarded
def analyze(**kw):
    """Outcomes plus weak-trace, histories, crossing and loss analyses."""
    config = _load(kw, ",".join(ANALYSES))
    _report("analyze", config, compute_rows(config))


@main.command()
@experiment_options
@click.option("--sweep-param", type=click.Choice(["outer", "inner", "split", "M", "N"], case_sensitive=False))
@click.option("--sweep-values", help="Comma list; a..b expands to an integer range.")
@_guarded
def sweep(**kw):
    """Run one configuration per sweep value and summarize trends."""
    config = _load(kw, "outcomes,crossing")
    if config.sweep_param is None:
        raise UsageError("sweep.param", "a sweep parameter is required")
    rows = sweep_rows(config)
    _report("sweep", config, rows, sweep_summary(rows))


@main.command()
@click.option("--inner", "inner_count", type=int, default=2, show_default=True, help="Number of inner interferometers.")
@click.option(
    "--objective",
    type=click.Choice([o.value for o in Objective]),
    default=Objective.EQUAL_LOSS_ZERO_CROSSTALK.value,
    show_default=True,
)
@click.option("--seeds-per-dim", type=int, default=3, show_default=True)
@click.option("--restarts", type=int, default=3, show_default=True)
@click.option("--min-success", type=float, default=0.02, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
@_guarded
def tune(inner_count, objective, seeds_per_dim, restarts, min_success, jobs, output):
    """Search Vaidman beamsplitter angles for equal loss in both bits."""
    if seeds_per_dim < 1:
        raise UsageError("seeds_per_dim", "must be >= 1")
    if jobs < 1:
        raise UsageError("jobs", "must be >= 1")
    problem = TuneProblem(inner_count=inner_count, objective=Objective(objective), min_success=min_success)
    result = solve_equal_loss(problem, default_seeds(problem, seeds_per_dim), restarts=restarts, jobs=jobs)
    ev = evaluate(problem, result.params)
    payload = {
        "command": "tune",
        "problem": {
            "inner_count": inner_count,
            "objective": objective,
            "free": list(problem.free),
            "tied": list(problem.tied),
            "min_success": min_success,
            "seeds_per_dim": seeds_per_dim,
            "restarts": restarts,
        },
        "result": {
            "params": result.params,
            "bs_params": problem.angles(result.params),
            "residual": result.residual,
            "crosstalk": result.crosstalk,
            "success": result.success,
            "p_loss_block": ev.p_loss_block,
            "p_loss_open": ev.p_loss_open,
            "iterations": result.iterations,
            "converged": result.converged,
            "seed_index": result.seed_index,
        },
    }
    _emit(render_json(payload), output_target(output, "tune", "vaidman", "json"))
    if not result.converged:
        _fail(EXIT_NO_CONVERGENCE, f"tuner did not converge (residual {result.residual:.3g}, crosstalk {result.crosstalk:.3g})")


if __name__ == "__main__":
    main()
