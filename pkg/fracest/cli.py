"""
CLI entry point.

Usage:
    fracest point --input sample.csv --alpha 0.25 --x 0.5 --json
    fracest curve --input sample.csv --alpha 0.25 --output curve.csv
    fracest loss --alpha 0.25 --q 2 --n 100 --reps 2000
    fracest limit --alpha 0.1 --q 2 --u 0.5 --u 1.0
    fracest spectral --model ar1:0.5 --alpha 0.25 --n 1024
    fracest mixed --input pairs.csv --alpha 0.25 --beta 0.1 --x 0.5 --y 0.3
    fracest mc --experiment unbiasedness --config cfg.kv --json out.json
    fracest selftest
    fracest runs --db data/fracest.db

Exit codes: 0 success, 1 invalid input, 2 numerical failure or I/O error.
"""
import logging
import math
import sys

import click
import numpy as np

from fracest import __version__, lq, mixed, spectral
from fracest.errors import FracestError, InvalidInputError, NumericalError
from fracest.experiments import get_experiment, list_experiments
from fracest.fraccalc import as_order, uniform_grid
from fracest.ingest import ingest_sample, read_kv
from fracest.montecarlo import run_replications
from fracest.point import Sample, confidence_interval, estimate_curve
from fracest.report import emit_report, file_digest, manifest_digest, write_manifest
from fracest.schemas import DEFAULT_SEED, McConfig, RunManifest

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
MC_FIELDS = ("reps", "seed", "workers", "n")


# ---------------------------------------------------------------------------
# Shared options
# ---------------------------------------------------------------------------

def db_option(fn):
    return click.option("--db", "db_path", type=click.Path(dir_okay=False), default=None,
                        help="Record the run in this ledger (default: not recorded)")(fn)


def seed_option(fn):
    return click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=DEFAULT_SEED,
                        envvar="FRACEST_SEED", show_default=True, help="Master seed")(fn)


def output_options(fn):
    fn = click.option("--output", "-o", "output", type=click.Path(dir_okay=False), default=None,
                      help="Write the report here (default: stdout)")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["text", "json", "csv"]), default="text",
                      help="Report format")(fn)
    fn = click.option("--json", "as_json", is_flag=True, help="Shortcut for --format json")(fn)
    return fn


def _resolve_format(fmt, as_json, output):
    if as_json:
        return "json"
    if fmt == "text" and output:
        return "json"
    return fmt


def _finish(subcommand, params, report, fmt, output, db_path, seed=None, inputs=(), extra_outputs=(),
            passed=None):
    """Emit the report, write the manifest next to each output and record the run."""
    outputs = [p for p in [output, *extra_outputs] if p]
    if fmt == "text":
        _print_text(report)
    else:
        emit_report(report, fmt, output)
    manifest = RunManifest(
        subcommand=subcommand,
        parameters=params,
        input_digests={p: file_digest(p) for p in inputs if p},
        outputs=outputs,
        seed=seed,
        version=__version__,
    )
    for path in outputs:
        write_manifest(manifest, path)
    if db_path:
        from db.models import get_engine, get_session, init_db, record_run

        engine = get_engine(db_path)
        init_db(engine)
        session = get_session(engine)
        try:
            row = record_run(session, manifest, manifest_digest(manifest), passed=passed)
            log.info("recorded run %d in %s", row.id, db_path)
        finally:
            session.close()
    return EXIT_OK


def _print_text(report):
    for key in sorted(report):
        value = report[key]
        if isinstance(value, float):
            value = "{:.10g}".format(value)
        elif isinstance(value, (list, tuple)) and len(value) > 8:
            value = "[{} values]".format(len(value))
        click.echo("  {:<18} {}".format(key + ":", value))


def _pass_line(passed, checks):
    if passed is None:
        click.secho("  no checks", fg="yellow", err=True)
        return
    for name in sorted(checks):
        click.secho("  {:<40} {}".format(name, "PASS" if checks[name] else "FAIL"),
                    fg="green" if checks[name] else "red", err=True)
    click.secho("  overall: {}".format("PASS" if passed else "FAIL"), fg="green" if passed else "red",
                bold=True, err=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging on stderr")
@click.version_option(__version__, prog_name="fracest")
def cli(verbose):
    """fracest: estimate fractional derivatives of reliability and spectral functions."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


@cli.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="One nonnegative value per line")
@click.option("--alpha", type=float, required=True, help="Order, 0 < alpha < 1/2")
@click.option("--x", "x", type=float, required=True, help="Evaluation point")
@click.option("--level", type=float, default=0.95, show_default=True)
@output_options
@db_option
def point(input_path, alpha, x, level, fmt, as_json, output, db_path):
    """Point estimate with a normal-theory confidence interval."""
    s = ingest_sample(input_path)
    if not isinstance(s, Sample):
        raise InvalidInputError("point estimation needs a one-column sample")
    est = confidence_interval(s, x, alpha, level)
    params = {"alpha": alpha, "x": x, "level": level, "input": input_path}
    return _finish("point", params, est.to_report(), _resolve_format(fmt, as_json, output), output,
                   db_path, inputs=[input_path])


@cli.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--alpha", type=float, required=True)
@click.option("--nodes", type=click.IntRange(2), default=101, show_default=True)
@click.option("--b", "b", type=float, default=None, help="Right end (default: sample maximum)")
@click.option("--output", "-o", type=click.Path(dir_okay=False), required=True, help="Curve CSV")
@db_option
def curve(input_path, alpha, nodes, b, output, db_path):
    """Estimated derivative curve on a uniform grid, written as node,value CSV."""
    s = ingest_sample(input_path)
    if not isinstance(s, Sample):
        raise InvalidInputError("curve estimation needs a one-column sample")
    b = float(np.max(s.values)) if b is None else b
    if not b > 0:
        raise InvalidInputError("grid right end must be positive")
    f = estimate_curve(s, uniform_grid(b, nodes).nodes, alpha)
    emit_report(f, path=output)
    params = {"alpha": alpha, "nodes": nodes, "b": b, "input": input_path}
    return _finish("curve", params, {"nodes": nodes, "b": b, "output": output}, "text", None, db_path,
                   inputs=[input_path], extra_outputs=[output])


@cli.command()
@click.option("--alpha", type=float, required=True)
@click.option("--q", "q", type=float, required=True)
@click.option("--n", "n", type=click.IntRange(1), required=True)
@click.option("--reps", type=click.IntRange(1), default=1000, show_default=True)
@click.option("--kernel", type=click.Choice(sorted(lq.KERNEL_VARIANTS)), default="exact", show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True, help="Level of the CLT radius")
@click.option("--workers", type=click.IntRange(1), default=1)
@seed_option
@output_options
@db_option
def loss(alpha, q, n, reps, kernel, level, workers, seed, fmt, as_json, output, db_path):
    """Monte-Carlo W_{q,n} against K(a,q) K_{R,a}, with the CLT radius."""
    spec = lq.LossSpec(q=q, order=alpha, n=n, reps=reps, seed=seed, workers=workers)
    rep = lq.empirical_loss(spec)
    out = dict(rep.extra)
    out["stderr_undefined"] = rep.stderr_undefined
    out["pass"] = rep.passed
    out["kernel"] = kernel
    mc = McConfig(reps=reps, seed=seed, workers=workers)
    u = lq.lq_confidence_radius(spec.order, q, lq.CovKernel(spec.order, kernel), level, mc)
    out.update(radius_u=u, radius=u / math.sqrt(n), level=level)
    params = {"alpha": alpha, "q": q, "n": n, "reps": reps, "kernel": kernel, "level": level}
    return _finish("loss", params, out, _resolve_format(fmt, as_json, output), output, db_path, seed=seed,
                   passed=rep.passed)


@cli.command()
@click.option("--alpha", type=float, required=True)
@click.option("--q", "q", type=float, default=2.0, show_default=True)
@click.option("--u", "levels", type=float, multiple=True, required=True, help="Tail level (repeatable)")
@click.option("--reps", type=click.IntRange(1), default=10000, show_default=True)
@click.option("--kernel", type=click.Choice(sorted(lq.KERNEL_VARIANTS)), default="exact", show_default=True)
@click.option("--workers", type=click.IntRange(1), default=1)
@seed_option
@output_options
@db_option
def limit(alpha, q, levels, reps, kernel, workers, seed, fmt, as_json, output, db_path):
    """Tail Q(u) = P(||zeta_inf||_q > u) of the Gaussian limit norm."""
    order = as_order(alpha)
    mc = McConfig(reps=reps, seed=seed, workers=workers)
    probs = lq.simulate_limit_tail(order, q, lq.CovKernel(order, kernel), np.asarray(levels), mc)
    bounds = None
    if q >= 2:
        bounds = [lq.chebyshev_tail_bound(order, q, u) if u > 0 else 1.0 for u in levels]
    out = {"alpha": order.alpha, "q": q, "kernel": kernel, "u": list(levels),
           "probability": [float(p) for p in np.atleast_1d(probs)], "chebyshev_bound": bounds}
    params = {"alpha": alpha, "q": q, "u": list(levels), "reps": reps, "kernel": kernel}
    return _finish("limit", params, out, _resolve_format(fmt, as_json, output), output, db_path, seed=seed)


@cli.command("spectral")
@click.option("--model", default="white", show_default=True, help="white[:var] or ar1:rho")
@click.option("--alpha", type=float, required=True)
@click.option("--n", "n", type=click.IntRange(2), default=1024, show_default=True)
@click.option("--reps", type=click.IntRange(1), default=200, show_default=True,
              help="Replications for the bias and variance checks")
@click.option("--band-reps", type=click.IntRange(1), default=20000, show_default=True)
@click.option("--lambda-grid", "points", type=click.IntRange(1), default=spectral.BAND_POINTS, show_default=True,
              help="Band frequencies 2 pi k / M, k = 1..M")
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Series CSV (default: simulate one from the model)")
@click.option("--series-out", type=click.Path(dir_okay=False), default=None)
@click.option("--curve-out", type=click.Path(dir_okay=False), default=None)
@click.option("--skip-mc", is_flag=True, help="Skip the bias and variance simulations")
@click.option("--workers", type=click.IntRange(1), default=1)
@seed_option
@output_options
@db_option
def spectral_cmd(model, alpha, n, reps, band_reps, points, level, input_path, series_out, curve_out, skip_mc,
                 workers, seed, fmt, as_json, output, db_path):
    """Spectral derivative curve with its uniform confidence band."""
    m = spectral.parse_model(model)
    order = as_order(alpha)
    if input_path:
        series = spectral.read_series(input_path)
        n = series.n
    else:
        series = spectral.generate_series(m, n, seed)
    if series_out:
        spectral.write_series(series, series_out)
    lam = spectral.band_grid(points)
    est = spectral.estimate_spectral_frac_derivative(series, order, lam)
    if curve_out:
        emit_report(est.as_grid_function(), path=curve_out)
    band_cfg = McConfig(reps=band_reps, seed=seed, workers=workers)
    half = spectral.uniform_confidence_band(m, order, n, level, band_cfg, lam)
    out = {
        "model": m.name, "alpha": order.alpha, "n": n, "level": level,
        "lambda": lam.tolist(), "estimate_curve": est.values.tolist(),
        "truth": spectral.spectral_truth(m, order, lam).tolist(),
        "band": half, "sigma2_alpha": spectral.sigma2_alpha(m, order, lam),
        "bias_slope": None, "var_ratio": None,
    }
    passed = None
    if not skip_mc:
        cfg = McConfig(reps=reps, seed=seed, workers=workers)
        common = {"model": model, "alpha": alpha}
        checks = {}
        if n >= 16:
            bias = run_replications("spectral-bias", cfg, dict(common, n_list=(n // 4, n // 2, n)))
            out["bias_slope"] = bias.extra["bias_slope"]
            checks.update(("bias_" + k, v) for k, v in bias.checks.items())
        var = run_replications("spectral-variance", cfg, dict(common, n=n))
        out["var_ratio"] = var.extra.get("var_ratio")
        out["plugin_factor"] = var.extra["plugin_factor"]
        checks.update(("variance_" + k, v) for k, v in var.checks.items())
        passed = all(checks.values()) if checks else None
        out["checks"] = checks
    out["pass"] = passed
    params = {"model": model, "alpha": alpha, "n": n, "reps": reps, "band_reps": band_reps,
              "lambda_grid": points, "level": level, "input": input_path, "skip_mc": skip_mc}
    return _finish("spectral", params, out, _resolve_format(fmt, as_json, output), output, db_path,
                   seed=seed, inputs=[input_path], extra_outputs=[series_out, curve_out], passed=passed)


@cli.command("mixed")
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Two comma-separated nonnegative values per line")
@click.option("--alpha", type=float, required=True)
@click.option("--beta", type=float, required=True)
@click.option("--x", "x", type=float, required=True)
@click.option("--y", "y", type=float, required=True)
@click.option("--field", "with_field", is_flag=True, help="Also report the L_q norm of the loss field")
@click.option("--grid", "grid_cells", type=click.IntRange(1), default=64, show_default=True)
@click.option("--q", "q", type=float, default=2.0, show_default=True)
@click.option("--law", type=click.Choice(mixed.BIVARIATE_KINDS), default="independent", show_default=True,
              help="Uniform-marginal law supplying the truth for the loss field")
@output_options
@db_option
def mixed_cmd(input_path, alpha, beta, x, y, with_field, grid_cells, q, law, fmt, as_json, output, db_path):
    """Mixed derivative estimate G_{a,b,n}(x, y)."""
    s = ingest_sample(input_path)
    if not isinstance(s, mixed.Sample2D):
        raise InvalidInputError("mixed estimation needs a two-column pair sample")
    order = mixed.MixedOrder(alpha, beta)
    out = {"estimate": mixed.estimate_mixed(s, x, y, order), "n": s.n, "alpha": alpha, "beta": beta,
           "x": x, "y": y, "regime": order.regime, "swapped": order.swapped}
    if with_field:
        g = uniform_grid(1.0, grid_cells + 1).nodes
        field = mixed.mixed_loss_field(s, order, (g, g), mixed.BivariateLaw(law))
        out.update(field_norm=mixed.lq_norm_2d(field, q), field_q=q, law=law, grid=grid_cells,
                   norm_shape=mixed.mixed_norm_shape(order, q))
    params = {"alpha": alpha, "beta": beta, "x": x, "y": y, "field": with_field, "grid": grid_cells,
              "q": q, "law": law, "input": input_path}
    return _finish("mixed", params, out, _resolve_format(fmt, as_json, output), output, db_path,
                   inputs=[input_path])


@cli.command()
@click.option("--experiment", "-e", "name", default=None, help="Registered experiment name")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Flat key=value file")
@click.option("--reps", type=click.IntRange(1), default=None)
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, envvar="FRACEST_SEED")
@click.option("--workers", type=click.IntRange(1), default=None)
@click.option("--n", "n_list", default=None, help="Sample size(s), comma separated")
@click.option("--set", "overrides", multiple=True, help="Experiment parameter key=value (repeatable)")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None,
              help="Write the JSON report here (default: stdout)")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--keep-values", is_flag=True, help="Include per-replication values")
@click.option("--list", "list_only", is_flag=True, help="List experiments and exit")
@db_option
@click.pass_context
def mc(ctx, name, config_path, reps, seed, workers, n_list, overrides, json_path, csv_path, keep_values,
       list_only, db_path):
    """Run a registered Monte-Carlo experiment."""
    if list_only:
        for exp_name, summary in list_experiments():
            click.echo("  {:<22} {}".format(exp_name, summary))
        return EXIT_OK
    file_values = read_kv(config_path) if config_path else {}
    name = name or file_values.pop("experiment", None)
    file_values.pop("experiment", None)
    if not name:
        raise click.UsageError("--experiment is required (or experiment= in --config)")
    get_experiment(name)

    cfg_values = {k: file_values.pop(k) for k in MC_FIELDS if k in file_values}
    seed_source = ctx.get_parameter_source("seed")
    if seed is not None and (seed_source == click.core.ParameterSource.COMMANDLINE or "seed" not in cfg_values):
        cfg_values["seed"] = seed
    for key, value in (("reps", reps), ("workers", workers), ("n", n_list)):
        if value is not None:
            cfg_values[key] = value
    try:
        cfg = McConfig(**cfg_values)
    except ValueError as exc:
        raise InvalidInputError("bad run configuration: {}".format(exc))

    params = dict(file_values)
    for item in overrides:
        if "=" not in item:
            raise click.BadParameter("expected key=value, got {!r}".format(item), param_hint="--set")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()

    report = run_replications(name, cfg, params, keep_values=keep_values)
    click.secho("{} ({} reps, seed {})".format(name, cfg.reps, cfg.seed), bold=True, err=True)
    _pass_line(report.passed, report.checks)
    if csv_path:
        emit_report(report, "csv", csv_path)
    manifest_params = {"experiment": name, "config": cfg.model_dump(), "overrides": params,
                       "keep_values": keep_values}
    return _finish("mc", manifest_params, report, "json", json_path, db_path, seed=cfg.seed,
                   inputs=[config_path], extra_outputs=[csv_path], passed=report.passed)


@cli.command()
@click.option("--module", "modules", multiple=True, help="Only run checks of this module (repeatable)")
@db_option
def selftest(modules, db_path):
    """Run the degenerate-case checks and print a PASS/FAIL table."""
    from fracest.selftest import run_selftest

    results = run_selftest(modules)
    click.echo("=" * 72)
    click.echo("  fracest selftest")
    click.echo("=" * 72)
    current = None
    for module, name, passed, detail in results:
        if module != current:
            click.echo("[{}]".format(module))
            current = module
        click.secho("  {:<4} ".format("PASS" if passed else "FAIL"), fg="green" if passed else "red", nl=False)
        click.echo("{}  ({})".format(name, detail))
    failed = sum(1 for r in results if not r[2])
    click.echo("")
    click.secho("{} checks, {} failed".format(len(results), failed), fg="red" if failed else "green", bold=True)
    _finish("selftest", {"modules": list(modules)}, {}, "text", None, db_path, passed=failed == 0)
    return EXIT_INVALID if failed else EXIT_OK


@cli.command()
@click.option("--limit", "limit_rows", type=click.IntRange(1), default=20, show_default=True)
@click.option("--db", "db_path", type=click.Path(dir_okay=False), default=None,
              help="Ledger file (default: data/fracest.db)")
def runs(limit_rows, db_path):
    """Show the most recent recorded runs."""
    from db.models import Run, get_engine, get_session, init_db

    engine = get_engine(db_path)
    init_db(engine)
    session = get_session(engine)
    try:
        total = session.query(Run).count()
        rows = session.query(Run).order_by(Run.id.desc()).limit(limit_rows).all()
        click.echo("=== Run Ledger ({} runs) ===".format(total))
        for row in rows:
            status = {None: ("-", None), 1: ("PASS", "green"), 0: ("FAIL", "red")}[row.passed]
            click.echo("  {:>5}  {}  {:<10} seed={:<12} ".format(
                row.id, row.created_at[:19], row.subcommand, row.seed or "-"), nl=False)
            click.secho(status[0], fg=status[1])
    finally:
        session.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def parse_and_dispatch(argv):
    """Run the CLI on argv and return the exit code instead of exiting."""
    argv = list(argv)
    if not argv:
        click.echo(cli.get_help(click.Context(cli, info_name="fracest")), err=True)
        return EXIT_INVALID
    try:
        rv = cli.main(args=argv, prog_name="fracest", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("Aborted.", err=True)
        return EXIT_INVALID
    except click.ClickException as exc:
        exc.show()
        return EXIT_INVALID
    except InvalidInputError as exc:
        click.secho("error: {}".format(exc), fg="red", err=True)
        return EXIT_INVALID
    except (NumericalError, OSError) as exc:
        click.secho("numerical error: {}".format(exc) if isinstance(exc, NumericalError)
                    else "I/O error: {}".format(exc), fg="red", err=True)
        return EXIT_NUMERICAL
    except FracestError as exc:
        click.secho("error: {}".format(exc), fg="red", err=True)
        return EXIT_NUMERICAL
    return rv if isinstance(rv, int) else EXIT_OK


def main():
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
