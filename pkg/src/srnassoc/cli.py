"""Command line entry point: ``run``, ``sweep``, ``oracle``, ``check``, ``scenarios``."""

from __future__ import annotations

import dataclasses
import glob
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from .channel import Channel
from .env import SRNEnvironment, evaluate_frame
from .errors import IntractableError, NonFiniteError, UnsupportedOperationError
from .harness import ExperimentConfig, preset_scenarios, run_experiment, streams, summary_text
from .oracle import optimal_policy, random_policy

# Every config field except the seed (handled explicitly) becomes a --flag.
_OVERRIDE_FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig) if f.name != "seed"]


def _parse_value(raw):
    """JSON literal if it parses (numbers, lists, objects, null), else the raw string."""
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _override_options(fn):
    for name in reversed(_OVERRIDE_FIELDS):
        flag = "--" + name.replace("_", "-")
        fn = click.option(flag, name, default=None, metavar="VALUE",
                          help=f"override config field {name} (JSON literal)")(fn)
    return fn


def _apply_overrides(config: ExperimentConfig, overrides: dict, seed=None) -> ExperimentConfig:
    d = config.to_dict()
    for name, raw in overrides.items():
        if raw is not None:
            d[name] = _parse_value(raw)
    if seed is not None:
        d["seed"] = seed
    return ExperimentConfig.from_dict(d)


def _run_one(config: ExperimentConfig):
    result = run_experiment(config)
    return config.stem, summary_text(result.summary), str(result.csv_path)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="info-level logging")
def main(verbose):
    """Symbiotic-radio user association experiments."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, required=True, help="master seed for this run")
@_override_options
def run(config, seed, **overrides):
    """Run one experiment from a JSON CONFIG file."""
    cfg = _apply_overrides(ExperimentConfig.load(config), overrides, seed)
    try:
        stem, text, csv_path = _run_one(cfg)
    except NonFiniteError as exc:
        click.echo(f"error: {exc} {exc.diagnostics}", err=True)
        sys.exit(2)
    except UnsupportedOperationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    click.echo(f"# {stem} -> {csv_path}")
    click.echo(text, nl=False)


@main.command()
@click.argument("pattern")
@click.option("--seed", "seeds", type=int, multiple=True,
              help="seed(s) to run each config with; default keeps each file's seed")
@click.option("--jobs", type=int, default=1, show_default=True, help="parallel worker processes")
@_override_options
def sweep(pattern, seeds, jobs, **overrides):
    """Run every config matching the glob PATTERN."""
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise click.UsageError(f"no config matches {pattern!r}")
    configs = []
    for p in paths:
        base = ExperimentConfig.load(p)
        for s in seeds or [None]:
            configs.append(_apply_overrides(base, overrides, s))
    failed = False
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, c) for c in configs]
            outcomes = []
            for c, fut in zip(configs, futures):
                try:
                    outcomes.append(fut.result())
                except (NonFiniteError, UnsupportedOperationError) as exc:
                    click.echo(f"error in {c.stem}: {exc}", err=True)
                    failed = True
    else:
        outcomes = []
        for c in configs:
            try:
                outcomes.append(_run_one(c))
            except (NonFiniteError, UnsupportedOperationError) as exc:
                click.echo(f"error in {c.stem}: {exc}", err=True)
                failed = True
    for stem, text, csv_path in outcomes:
        click.echo(f"# {stem} -> {csv_path}")
        click.echo(text, nl=False)
    if failed:
        sys.exit(2)


@main.command()
@click.option("--m", "num_users", type=int, required=True, help="number of users")
@click.option("--n", "num_devices", type=int, required=True, help="number of devices")
@click.option("--seed", type=int, required=True)
@click.option("--rho", type=float, default=0.99, show_default=True)
@click.option("--frames", type=int, default=1, show_default=True, help="frames to evaluate")
@click.option("--cap", type=int, default=None, help="enumeration cap (default 1e6)")
def oracle(num_users, num_devices, seed, rho, frames, cap):
    """Exhaustive-search optimum (and a random baseline) on a seeded topology."""
    cfg = ExperimentConfig(num_users=num_users, num_devices=num_devices, rho=rho, seed=seed)
    if cap is not None:
        cfg.enum_cap = cap
    rngs = streams(seed)
    env = SRNEnvironment(Channel(cfg.topology(), rho, rngs["topology"], rngs["fading"]), cfg.system())
    for t in range(1, frames + 1):
        gains = env.advance()
        try:
            best = optimal_policy(gains, env.params, cfg.enum_cap)
        except IntractableError as exc:
            click.echo(f"intractable: {exc}")
            return
        rand = random_policy(num_users, num_devices, rngs["random"])
        r = evaluate_frame(gains, rand, env.params).sum_rate
        labels = " ".join(str(u) for u in best.assoc.labels())
        click.echo(f"frame={t} optimal_users={labels} optimal_sum_rate={best.achieved_sum_rate!r} "
                   f"random_sum_rate={r!r}")


@main.command()
def check():
    """Run the quick invariant suites; exit nonzero on any failure."""
    from .checks import run_all

    ok = True
    for name, passed, detail in run_all():
        click.echo(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= bool(passed)
    if not ok:
        sys.exit(1)


@main.command()
@click.argument("outdir", type=click.Path(file_okay=False))
def scenarios(outdir):
    """Write JSON configs for the preset scenarios into OUTDIR."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, cfg in preset_scenarios().items():
        cfg.save(out / f"{name}.json")
        click.echo(str(out / f"{name}.json"))


if __name__ == "__main__":
    main()
