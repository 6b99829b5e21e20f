"""Command-line surface: forge, pretrain, eval, export-embeddings, report.

Every command takes the same configuration plumbing (config file, --set
overrides, SRQA_* environment variables) and honors the global seed, so
identical invocations reproduce identical artifacts.  Exit codes: 0
success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys

import click
from filelock import FileLock, Timeout

from . import __version__
from .config import RunConfig, load_config
from .downstream import (
    FeatureCache,
    eval_protocol,
    file_hash,
    load_report,
    save_report,
)
from .errors import ConfigError, NumericError, SrqaError
from .forge import CropSpec, crop, forge, plan_forge, read_image
from .net import encode_batch, load_checkpoint
from .records import read_manifest, read_scored_manifest, write_manifest
from .trainer import read_run_log, resume, train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

LOCK_NAME = ".srqa.lock"


def _config_options(fn):
    @click.option("--config", "-c", "config_path", type=click.Path(), default=None,
                  help="YAML configuration file.")
    @click.option("--set", "-s", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                  help="Override one configuration value (repeatable).")
    @click.option("--seed", type=int, default=None, help="Override the global seed.")
    @click.option("--print-config", is_flag=True,
                  help="Print the fully-resolved configuration and exit.")
    @functools.wraps(fn)
    def wrapper(*args, config_path=None, overrides=(), seed=None, print_config=False, **kwargs):
        expr = list(overrides)
        if seed is not None:
            expr.append(f"seed={seed}")
        cfg = load_config(config_path, expr)
        if print_config:
            click.echo(cfg.to_yaml(), nl=False)
            return
        return fn(*args, cfg=cfg, **kwargs)

    return wrapper


def _locked(out_dir: str) -> FileLock:
    os.makedirs(out_dir, exist_ok=True)
    return FileLock(os.path.join(out_dir, LOCK_NAME), timeout=120)


@click.group(name="srqa")
@click.version_option(__version__)
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging.")
def cli(verbose):
    """Self-supervised toolkit for super-resolution image quality assessment."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command(name="forge")
@click.argument("lr_dir", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--dry-run", is_flag=True, help="Print planned record counts, write nothing.")
@_config_options
def cmd_forge(lr_dir, out_dir, dry_run, cfg: RunConfig):
    """Apply the degradation bank to LR_DIR and write a dataset to OUT_DIR."""
    operators = cfg.operators()
    scales = [float(s) for s in cfg["forge.scales"]]
    if dry_run:
        plan = plan_forge(lr_dir, operators, scales)
        click.echo(json.dumps(plan, indent=2))
        return
    with _locked(out_dir):
        manifest = forge(lr_dir, operators, scales, out_dir, seed=cfg.seed)
        path = os.path.join(out_dir, "manifest.jsonl")
        write_manifest(manifest, path)
    counts = manifest.summary()
    click.echo(f"manifest: {path}")
    for role in ("LR", "SR", "DS", "HR"):
        click.echo(f"  {role}: {counts[role]}")


@cli.command(name="pretrain")
@click.argument("manifest_path", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--ablate", type=click.Choice(["no-color", "no-aux"]), multiple=True,
              help="Disable the color-space transform or the auxiliary task.")
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Continue from a checkpoint of the same configuration.")
@_config_options
def cmd_pretrain(manifest_path, out_dir, ablate, resume_path, cfg: RunConfig):
    """Run the contrastive pretext training on a forged MANIFEST."""
    manifest = read_manifest(manifest_path)
    overrides = {}
    if "no-color" in ablate:
        overrides["color_transform"] = False
    if "no-aux" in ablate:
        overrides["auxiliary"] = False
    train_cfg = cfg.train_config(**overrides)
    with _locked(out_dir):
        if resume_path:
            ckpt = resume(resume_path, manifest, train_cfg, out_dir)
        else:
            ckpt = train(manifest, train_cfg, out_dir)
    click.echo(f"checkpoint: {ckpt}")
    click.echo(f"run log: {os.path.join(out_dir, 'runlog.jsonl')}")


@cli.command(name="eval")
@click.argument("scored_manifest", type=click.Path())
@click.argument("checkpoint", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Where to write the evaluation report (JSON).")
@click.option("--per-scale", is_flag=True, help="Add a per-scaling-factor breakdown.")
@click.option("--cache", "cache_path", type=click.Path(), default=None,
              help="Feature cache file (created if missing).")
@_config_options
def cmd_eval(scored_manifest, checkpoint, out_path, per_scale, cache_path, cfg: RunConfig):
    """Repeated-split linear-probe evaluation of frozen features."""
    scored, manifest = read_scored_manifest(scored_manifest)
    model, _, _ = load_checkpoint(checkpoint)
    kwargs = cfg.eval_kwargs()
    if per_scale:
        kwargs["per_scale"] = True
    cache = FeatureCache(cache_path) if cache_path else None
    report = eval_protocol(
        scored,
        model,
        base_dir=manifest.base_dir,
        cache=cache,
        checkpoint_hash=file_hash(checkpoint) if cache is not None else "",
        **kwargs,
    )
    save_report(report, out_path)
    click.echo(report.format_table())
    click.echo(f"report: {out_path}")


@cli.command(name="export-embeddings")
@click.argument("manifest_path", type=click.Path())
@click.argument("checkpoint", type=click.Path())
@click.argument("out_file", type=click.Path())
@click.option("--role", "roles", multiple=True, type=click.Choice(["SR", "DS", "LR", "HR"]),
              help="Roles to export (default SR and DS).")
@click.option("--method", "methods", multiple=True, help="Restrict to these method ids.")
@click.option("--scale", "scales", multiple=True, type=float, help="Restrict to these scales.")
@_config_options
def cmd_export_embeddings(manifest_path, checkpoint, out_file, roles, methods, scales,
                          cfg: RunConfig):
    """Export center-crop encoder latents with (method, scale) labels."""
    import numpy as np

    manifest = read_manifest(manifest_path)
    model, _, _ = load_checkpoint(checkpoint)
    roles = roles or ("SR", "DS")
    records = [
        r
        for r in manifest.by_role(*roles)
        if (not methods or r.method_id in methods)
        and (not scales or r.scale in {float(s) for s in scales})
    ]
    if not records:
        raise SrqaError("selection filter matched no records")
    crop_size = int(cfg["train.crop_size"])
    spec = CropSpec(size=crop_size, position="center")
    crops = np.stack(
        [crop(read_image(manifest.resolve_path(r)), spec) for r in records]
    ).astype(np.float32)
    latents = encode_batch(model, crops)
    d = latents.shape[1]
    with open(out_file, "w", encoding="utf-8") as fh:
        header = ["content_id", "method_id", "scale", "role"] + [f"h{i}" for i in range(d)]
        fh.write("\t".join(header) + "\n")
        for rec, vec in zip(records, latents):
            row = [rec.content_id, rec.method_id, f"{rec.scale:g}", rec.role]
            row.extend(f"{v:.8g}" for v in vec)
            fh.write("\t".join(row) + "\n")
    click.echo(f"wrote {len(records)} embeddings of {d} dims to {out_file}")


@cli.command(name="report")
@click.option("--run-log", "run_log_path", type=click.Path(), default=None,
              help="Training run log (JSONL) to plot and summarize.")
@click.option("--eval-report", "eval_paths", type=click.Path(), multiple=True,
              help="Evaluation report JSON (repeatable for side-by-side comparison).")
@click.option("--out-dir", type=click.Path(), required=True)
@_config_options
def cmd_report(run_log_path, eval_paths, out_dir, cfg: RunConfig):
    """Render figures and delimited tables from run logs and eval reports."""
    from .report import write_eval_report_files, write_run_report

    if not run_log_path and not eval_paths:
        raise click.UsageError("provide --run-log and/or --eval-report inputs")
    written: list[str] = []
    if run_log_path:
        if not os.path.exists(run_log_path):
            raise SrqaError(f"run log {run_log_path!r} does not exist")
        written += write_run_report(read_run_log(run_log_path), out_dir)
    if eval_paths:
        for p in eval_paths:
            if not os.path.exists(p):
                raise SrqaError(f"eval report {p!r} does not exist")
        reports = [load_report(p) for p in eval_paths]
        names = [os.path.splitext(os.path.basename(p))[0] for p in eval_paths]
        written += write_eval_report_files(reports, names, out_dir)
    for path in written:
        click.echo(f"wrote {path}")


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        return EXIT_USAGE
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"usage error: {exc}", err=True)
        return EXIT_USAGE
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    except (SrqaError, Timeout) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
