"""Command-line interface mirroring the HTTP API, plus the synthetic bench."""

from __future__ import annotations

import json
import sys

import click

from .config import load_config
from .workbench import Workbench


def _workbench(ctx) -> Workbench:
    config = load_config(ctx.obj.get("config"), data_dir=ctx.obj.get("data_dir"))
    return Workbench(config)


def _emit(payload):
    click.echo(json.dumps(payload, indent=1, sort_keys=True, default=str))


@click.group()
@click.option("--config", "-c", type=click.Path(exists=True), default=None,
              help="JSON config file (env vars OWCLIP_* override).")
@click.option("--data-dir", "-d", type=click.Path(), default=None,
              help="Workbench data directory (overrides config file).")
@click.pass_context
def main(ctx, config, data_dir):
    """Open-world annotation and incremental tuning workbench."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = config
    ctx.obj["data_dir"] = data_dir


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve(ctx, host, port):
    """Run the HTTP service."""
    import uvicorn

    from ..errors import StartupError
    from .api import create_app

    config = load_config(ctx.obj.get("config"), data_dir=ctx.obj.get("data_dir"),
                         host=host, port=port)
    try:
        app = create_app(Workbench(config))
        uvicorn.run(app, host=config.host, port=config.port)
    except OSError as exc:
        raise StartupError(f"cannot serve on {config.host}:{config.port}: {exc}") from exc


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@click.option("--store", type=click.Path(exists=True), default=None,
              help="Embedding store for the precomputed backend.")
@click.pass_context
def ingest(ctx, manifest, store):
    """Ingest a proposal manifest."""
    _emit(_workbench(ctx).ingest(manifest, store_path=store))


@main.command()
@click.pass_context
def pool(ctx):
    """Show pool and class counts."""
    wb = _workbench(ctx)
    _emit({**wb.pool_summary(), "unknown_ids": wb.unknown[:20]})


@main.command()
@click.option("--method", default="tsne", type=click.Choice(["tsne", "pca"]))
@click.option("--seed", type=int, default=0)
@click.pass_context
def projection(ctx, method, seed):
    """Project the unknown pool to 2-D."""
    proj = _workbench(ctx).projection(method=method, seed=seed)
    _emit({"method": proj.method, "seed": proj.seed,
           "points": [{"id": pid, "x": x, "y": y}
                      for pid, (x, y) in proj.points.items()]})


@main.command()
@click.argument("polygon")
@click.option("--method", default="tsne")
@click.option("--seed", type=int, default=0)
@click.pass_context
def lasso(ctx, polygon, method, seed):
    """Select unknown proposals inside a polygon (JSON list of [x, y])."""
    ids = _workbench(ctx).lasso(json.loads(polygon), method=method, seed=seed)
    _emit({"ids": ids, "count": len(ids)})


@main.command()
@click.argument("proposal_id")
@click.option("--k", type=int, default=100)
@click.pass_context
def related(ctx, proposal_id, k):
    """Top-k most similar unknown proposals."""
    _emit({"ids": _workbench(ctx).related(proposal_id, k=k)})


@main.group()
def session():
    """Annotation session commands."""


@session.command("new")
@click.argument("label")
@click.pass_context
def session_new(ctx, label):
    wb = _workbench(ctx)
    s = wb.create_session(label)
    _emit({"session_id": s.session_id, "phrases": s.phrase_list.phrases,
           "candidates": s.candidates()})


@session.command("phrases")
@click.argument("session_id")
@click.pass_context
def session_phrases(ctx, session_id):
    s = _workbench(ctx)._session(session_id)
    _emit({"phrases": s.phrase_list.phrases, "selected": s.phrase_list.selected})


@session.command("select")
@click.argument("session_id")
@click.argument("indices", nargs=-1, type=int)
@click.pass_context
def session_select(ctx, session_id, indices):
    pl = _workbench(ctx).select_session_phrases(session_id, list(indices))
    _emit({"phrases": pl.phrases, "selected": pl.selected})


@session.command("candidates")
@click.argument("session_id")
@click.option("--ls", type=float, default=None)
@click.option("--hs", type=float, default=None)
@click.option("--lh", type=float, default=None)
@click.option("--hh", type=float, default=None)
@click.pass_context
def session_candidates(ctx, session_id, ls, hs, lh, hh):
    wb = _workbench(ctx)
    if None not in (ls, hs, lh, hh):
        sets = wb.set_ranges(session_id, ls, hs, lh, hh)
    else:
        sets = wb._session(session_id).candidates()
    _emit({"simple": sets["simple"], "hard": sets["hard"]})


@session.command("density")
@click.argument("session_id")
@click.option("--value", default="score", type=click.Choice(["score", "relative"]))
@click.pass_context
def session_density(ctx, session_id, value):
    xs, ys = _workbench(ctx).session_density(session_id, value=value)
    _emit({"x": list(map(float, xs)), "y": list(map(float, ys))})


@session.command("annotate")
@click.argument("session_id")
@click.option("--mode", type=click.Choice(["delete", "reserve"]), required=True)
@click.option("--ids", default="[]", help="JSON list of proposal ids.")
@click.pass_context
def session_annotate(ctx, session_id, mode, ids):
    accepted = _workbench(ctx).annotate(session_id, mode, json.loads(ids))
    _emit({"accepted": accepted, "count": len(accepted)})


@session.command("finalize")
@click.argument("session_id")
@click.option("--ablation", default=None)
@click.pass_context
def session_finalize(ctx, session_id, ablation):
    s = _workbench(ctx).finalize_session(session_id, ablation=ablation)
    _emit({"session_id": s.session_id, "state": s.state})


@main.command()
@click.argument("session_ids", nargs=-1, required=True)
@click.option("--ablation", default=None,
              type=click.Choice(["full", "wo-PhraseSelection", "wo-LLM",
                                 "wo-Differentiation", "wo-CS"]))
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--train-seed", type=int, default=None)
@click.pass_context
def train(ctx, session_ids, ablation, epochs, batch_size, learning_rate,
          temperature, train_seed):
    """Assemble an episode from finalized sessions and train it."""
    hyper = {k: v for k, v in [("epochs", epochs), ("batch_size", batch_size),
                               ("learning_rate", learning_rate),
                               ("temperature", temperature), ("seed", train_seed)]
             if v is not None}
    report, result = _workbench(ctx).finalize_and_train(
        list(session_ids), hyperparams=hyper, ablation=ablation)
    _emit({"report": report.to_json(), "eval": result.to_json()})


@main.command("eval")
@click.option("--t", type=float, default=None, help="Routing threshold override.")
@click.pass_context
def eval_cmd(ctx, t):
    """Evaluate the eval split at IoU 0.5."""
    _emit(_workbench(ctx).evaluate(t_threshold=t).to_json())


@main.command()
@click.pass_context
def classes(ctx):
    """List learned classes."""
    wb = _workbench(ctx)
    _emit({"classes": wb.class_summary(),
           "episodes": [e.episode_id for e in wb.episodes]})


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--workdir", type=click.Path(), default=None,
              help="Keep benchmark artifacts here (default: temp dir).")
@click.option("--ablation", default=None)
@click.option("--skip-probe", is_flag=True, help="Skip the completeness probe.")
def bench(seed, workdir, ablation, skip_probe):
    """Run the synthetic end-to-end benchmark and completeness probe."""
    import tempfile

    from .bench import run_completeness_probe, run_mini_owod

    def _run(path):
        result = run_mini_owod(path, seed=seed, ablation=ablation)
        payload = result.to_json()
        gap = result.current_accuracy - result.oracle_accuracy
        forgot = result.known_accuracy_before - result.known_accuracy_after
        payload["pass_current_known"] = bool(gap >= -0.02)
        payload["pass_forgetting"] = bool(forgot <= 0.02)
        if not skip_probe:
            full = run_completeness_probe(seed, "full")
            wocs = run_completeness_probe(seed, "wo-CS")
            payload["completeness_probe"] = {
                "full_spearman": full.spearman,
                "wo_cs_spearman": wocs.spearman,
                "pass": bool(full.spearman >= 0.8 and wocs.spearman < full.spearman),
            }
        return payload

    if workdir:
        payload = _run(workdir)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            payload = _run(tmp)
    _emit(payload)
    ok = payload["pass_current_known"] and payload["pass_forgetting"]
    if "completeness_probe" in payload:
        ok = ok and payload["completeness_probe"]["pass"]
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
