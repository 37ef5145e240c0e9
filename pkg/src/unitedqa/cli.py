"""Command-line entry point (``unitedqa``).

Exit codes: 0 success, 1 internal error, 2 input error, 3 no trainable data.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from .ensemble import HybridWeights
from .evaluation import breakdown_eval, em_score, wh_relative_accuracy
from .records import InputError, load_dataset
from .retrieval import build_index, load_corpus, save_index, split_passages

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_NO_DATA = 0, 1, 2, 3

log = logging.getLogger("unitedqa")


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        from .pipeline.artifacts import NoTrainableDataError
        try:
            return fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except NoTrainableDataError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NO_DATA)
        except Exception as exc:  # noqa: BLE001
            log.debug("internal error", exc_info=True)
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)
    return wrapper


def _config(path):
    from .pipeline.config import load_config
    return load_config(path)


config_option = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                             help="JSON run configuration.")


@click.group()
@click.option("--quiet", is_flag=True, help="Only log warnings and errors.")
def main(quiet):
    """Hybrid extractive/generative open-domain QA toolkit."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--documents", default=200, show_default=True, type=int)
@click.option("--train", "n_train", default=100, show_default=True, type=int)
@click.option("--test", "n_test", default=60, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@_guarded
def synth(out, documents, n_train, n_test, seed):
    """Generate a synthetic corpus, QA splits and a matching config.json."""
    from .pipeline.synth import synthesize, write_fixture
    try:
        data = synthesize(documents, n_train, n_test, seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    paths = write_fixture(data, Path(out))
    click.echo(f"documents {len(data.documents)} train {len(data.train)} test {len(data.test)} -> {paths['config']}")


@main.command()
@config_option
@click.argument("corpus", required=False, type=click.Path(dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Index file (default paths.index).")
@_guarded
def ingest(config_path, corpus, out):
    """Split a JSON-lines corpus into passages and build the BM25 index."""
    cfg = _config(config_path)
    corpus = Path(corpus) if corpus else cfg.path("corpus")
    if not corpus.exists():
        raise InputError(f"corpus not found: {corpus}")
    docs = load_corpus(corpus)
    if not docs:
        raise InputError(f"{corpus}: corpus is empty")
    passages = [p for d in docs for p in split_passages(d, cfg.retrieval.split_width)]
    index = build_index(passages, cfg.retrieval.k1, cfg.retrieval.b)
    out = Path(out) if out else cfg.path("index")
    save_index(index, out)
    click.echo(f"documents {len(docs)} passages {index.num_passages} vocabulary {len(index.postings)} -> {out}")


@main.command()
@config_option
@click.option("--reader", type=click.Choice(["extractive", "generative"]), required=True)
@click.option("--seed", type=int, default=None, help="Single seed (default: every seed in the config).")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Checkpoint path (single seed only).")
@_guarded
def train(config_path, reader, seed, out):
    """Train a reader and keep its best-dev checkpoint."""
    from .pipeline.train import train_reader
    cfg = _config(config_path)
    seeds = [seed] if seed is not None else cfg.seeds
    if out is not None and len(seeds) > 1:
        raise InputError("--out needs a single --seed")
    for s in seeds:
        man = train_reader(cfg, reader, s, out)
        m = man["metrics"][str(s)]
        extra = f" gamma {man['selected_gamma']:g}" if "selected_gamma" in man else ""
        click.echo(f"{reader} seed {s}: best dev EM {m['best_dev_em']:.4f} at epoch {m['best_epoch']}{extra}"
                   f" -> {man['checkpoint']}")


@main.command()
@config_option
@click.option("--checkpoint", "checkpoints", multiple=True, required=True, type=click.Path(dir_okay=False))
@click.option("--dataset", type=click.Path(dir_okay=False), default=None, help="Default paths.test.")
@click.option("--k", type=int, default=None, help="Retrieval depth (default retrieval.k).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@_guarded
def predict(config_path, checkpoints, dataset, k, out):
    """Answer every dataset question with each checkpoint."""
    from .pipeline.predict import predict_files
    cfg = _config(config_path)
    path = predict_files(cfg, list(checkpoints), dataset, out, k)
    click.echo(f"predictions -> {path}")


@main.command()
@config_option
@click.argument("predictions", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--model-id", default=None, help="Id for fused predictions (default: the routing mode).")
@_guarded
def ensemble(config_path, predictions, out, model_id):
    """Fuse prediction files (hybrid vote, 3-way majority, or passthrough)."""
    from .pipeline.fusion import ensemble_files
    cfg = _config(config_path)
    weights = HybridWeights(cfg.ensemble.tau, cfg.ensemble.delta)
    path, mode = ensemble_files(list(predictions), out, weights, model_id)
    click.echo(f"{mode} -> {path}")


@main.command()
@config_option
@click.argument("predictions", type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(dir_okay=False), default=None, help="Default paths.test.")
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Optional JSON metrics file.")
@_guarded
def evaluate(config_path, predictions, dataset, out):
    """Exact match (plus breakdown and WH tables) for each model in a file."""
    from .pipeline.artifacts import write_json
    from .pipeline.fusion import group_by_model
    cfg = _config(config_path)
    dataset = Path(dataset) if dataset else cfg.path("test")
    if not dataset.exists():
        raise InputError(f"dataset not found: {dataset}")
    examples = load_dataset(dataset)
    if not examples:
        raise InputError(f"{dataset}: empty dataset")
    results = {}
    for mid, per_q in group_by_model([predictions]).items():
        preds = {q: p.answer for q, p in per_q.items()}
        try:
            res = {"em": em_score(preds, examples)}
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if all(ex.annotated for ex in examples):
            res["breakdown"] = breakdown_eval(preds, examples)
        res["wh"] = wh_relative_accuracy(preds, examples)
        results[mid] = res
        click.echo(f"{mid}: EM {res['em']:.4f} ({len(examples)} questions)")
    if out:
        write_json(out, results)


@main.command()
@config_option
@click.option("--manifest", "manifests", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", "prediction_files", multiple=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", type=click.Path(dir_okay=False), default=None, help="Default paths.test.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Default paths.outputs.")
@_guarded
def report(config_path, manifests, prediction_files, dataset, out):
    """Assemble report.json and report.txt from manifests and predictions."""
    from .pipeline.report import build_report, write_report
    cfg = _config(config_path)
    if not manifests and not prediction_files:
        raise InputError("need at least one --manifest or --predictions file")
    dataset = Path(dataset) if dataset else cfg.path("test")
    if not dataset.exists():
        raise InputError(f"dataset not found: {dataset}")
    rep = build_report(cfg, list(manifests), list(prediction_files), dataset)
    j, t = write_report(rep, Path(out) if out else cfg.path("outputs"))
    click.echo(f"report -> {j}, {t}")


if __name__ == "__main__":
    main()
