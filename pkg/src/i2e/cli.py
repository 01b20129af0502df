"""`i2e` command line: thin client over the pipeline and the HTTP service.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import functools
import json
import logging
import sys

import click

from . import pipeline
from .config import ConfigError, load_config
from .evaluation import format_backtest_table, format_classification_table, format_regression_table

log = logging.getLogger(__name__)


def _load(ctx: click.Context):
    params = ctx.obj
    overrides = {}
    if params.get("seed") is not None:
        overrides["seed"] = params["seed"]
    if params.get("out") is not None:
        overrides["out_dir"] = params["out"]
    return load_config(params.get("config"), overrides)


def handle_errors(fn):
    """Map config problems to exit 2 and runtime failures to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError,) as exc:
            raise click.UsageError(str(exc)) from exc
        except click.ClickException:
            raise
        except Exception as exc:  # runtime failure -> exit 1
            log.debug("command failed", exc_info=True)
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group(name="i2e")
@click.option("--config", "config_path", type=click.Path(), help="JSON run configuration.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--out", type=click.Path(), default=None, help="Override the output directory.")
@click.option("-v", "--verbose", is_flag=True, help="Verbose logging.")
@click.pass_context
def main(ctx, config_path, seed, out, verbose):
    """Index-to-equity forecasting pipeline and prediction service."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(message)s")
    ctx.obj = {"config": config_path, "seed": seed, "out": out}


@main.command()
@click.pass_context
@handle_errors
def ingest(ctx):
    """Populate the bar cache from the configured data source."""
    config = _load(ctx)
    result = pipeline.ingest(config)
    click.echo(f"ingested {result['loaded']} symbols ({len(result['failed'])} failed)")


@main.command()
@click.option("--output", type=click.Path(), default=None, help="Histogram CSV destination.")
@click.pass_context
@handle_errors
def stats(ctx, output):
    """Write the records-per-date coverage histogram CSV."""
    config = _load(ctx)
    path = pipeline.coverage_csv(config, output)
    click.echo(f"coverage histogram written to {path}")


@main.command()
@click.pass_context
@handle_errors
def featurize(ctx):
    """Compute features, windows, scaling, and dataset partitions."""
    config = _load(ctx)
    counts = pipeline.featurize(config)
    click.echo("partition sizes: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


@main.command()
@click.option("--backbone", type=click.Choice(["transformer", "lstm"]), default="transformer")
@click.pass_context
@handle_errors
def pretrain(ctx, backbone):
    """Train the classification model on the market index."""
    config = _load(ctx)
    run = pipeline.pretrain(config, backbone)
    click.echo(f"pretrained {backbone}: best epoch {run.early_stop_epoch}, "
               f"val loss {min(e['val_loss'] for e in run.epoch_log):.4f}")


@main.command()
@click.option("--backbone", type=click.Choice(["transformer", "lstm"]), default="transformer")
@click.option("--from-weights", "from_weights", type=click.Path(exists=True), required=True)
@click.option("--task", type=click.Choice(["classification", "regression"]), default="classification")
@click.pass_context
@handle_errors
def finetune(ctx, backbone, from_weights, task):
    """Fine-tune on individual stocks from pretrained/classification weights."""
    config = _load(ctx)
    run = pipeline.finetune(config, backbone, from_weights, task)
    click.echo(f"fine-tuned {backbone} ({task}): best epoch {run.early_stop_epoch}, "
               f"val loss {min(e['val_loss'] for e in run.epoch_log):.6f}")


@main.command(name="train-gbt")
@click.option("--task", type=click.Choice(["classification", "regression"]), default="classification")
@click.pass_context
@handle_errors
def train_gbt(ctx, task):
    """Fit the boosted-tree benchmark on the flattened 150-feature rows."""
    config = _load(ctx)
    model = pipeline.train_gbt(config, task)
    click.echo(f"gbt ({task}): {len(model.trees)} trees, final train loss {model.train_losses[-1]:.6f}")


@main.command()
@click.option("--partition", type=click.Choice(["test", "val"]), default="test")
@click.pass_context
@handle_errors
def evaluate(ctx, partition):
    """Print classification/regression metric tables for trained models."""
    config = _load(ctx)
    results = pipeline.evaluate(config, partition)
    if results["classification"]:
        from .evaluation import ClassificationMetrics

        rows = {name: ClassificationMetrics(**m) for name, m in results["classification"].items()}
        click.echo(format_classification_table(rows))
    if results["regression"]:
        click.echo("")
        click.echo(format_regression_table({n: m["mse_scaled"] for n, m in results["regression"].items()}))


@main.command()
@click.pass_context
@handle_errors
def backtest(ctx):
    """Run the ranked long/short daily backtest and write report files."""
    config = _load(ctx)
    reports = pipeline.backtest(config)
    click.echo(format_backtest_table({name: rep.average_daily_return for name, rep in reports.items()}))
    click.echo(f"reports under {pipeline.paths_for(config).reports}")


@main.command()
@click.option("--k", type=int, default=5, help="Names per side.")
@click.option("--server", default=None, help="Query a running service instead of computing locally.")
@click.pass_context
@handle_errors
def predict(ctx, k, server):
    """Show top/bottom k predictions for the next trading date."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if server:
        import httpx

        resp = httpx.get(f"{server.rstrip('/')}/api/v1/rank", params={"k": k}, timeout=60)
        if resp.status_code != 200:
            raise click.ClickException(f"server returned {resp.status_code}: {resp.text}")
        doc = resp.json()
        click.echo(json.dumps(doc, indent=2))
        return
    config = _load(ctx)
    snapshot = pipeline.predict_next(config)
    top, bottom = snapshot.top_bottom(min(k, len(snapshot.records) // 2))
    click.echo(f"target date {snapshot.target_date} (data as of {snapshot.as_of})")
    click.echo(f"{'rank':>4} {'symbol':<8} {'predicted':>12}")
    for e in top:
        click.echo(f"{e.rank:>4} {e.symbol:<8} {e.predicted_return:>12.6f}")
    click.echo("   ...")
    for e in bottom:
        click.echo(f"{e.rank:>4} {e.symbol:<8} {e.predicted_return:>12.6f}")


@main.command()
@click.option("--host", default=None, help="Bind address (default from config).")
@click.option("--port", type=int, default=None, help="Port (default from config).")
@click.pass_context
@handle_errors
def serve(ctx, host, port):
    """Run the prediction HTTP service."""
    import uvicorn

    from .service import create_app

    config = _load(ctx)
    app = create_app(config)
    uvicorn.run(app, host=host or config.service.host, port=port or config.service.port)


if __name__ == "__main__":
    sys.exit(main())
