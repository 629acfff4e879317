"""Command line: curate, toygen, train, sample and eval.

Every command writes ``run.json`` (tool version, command, resolved config) and
``run_config.yaml`` into its output directory. Exit codes: 0 success, 1 usage
or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, ToygenConfig, build_section, load_config, with_seed
from .dataset import (CanonicalAsset, curate_directory, decode_points, encode_condition, find_assets,
                      generate_toy_set, load_part_dir, load_toy_archive, summarize, write_manifest,
                      write_toy_archive)
from .denoiser import Denoiser
from .errors import ConfigError, NumericError, PartforgeError
from .flow import Adam, SamplerConfig, TrainState, build_examples, euler_sample_batch, n_histogram, train
from .geometry import (MetricsReport, assemble, chamfer, f_score, load_mesh, pairwise_iou, sample_surface,
                       voxelize_points, voxelize_solid, write_ply)

log = logging.getLogger("partforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(PartforgeError):
    """Inputs are missing or unusable."""


def write_run_info(out_dir: Path, command: str, cfg: RunConfig, args: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    info = {"tool": "partforge", "version": __version__, "command": command,
            "args": args or {}, "config": cfg.to_dict()}
    (out_dir / "run.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "run_config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")


# --- commands as plain functions ------------------------------------------

def cmd_curate(in_dir, out_dir, cfg: RunConfig, threads: int = 1) -> int:
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise DataError(f"{in_dir} is not a directory")
    if not find_assets(in_dir):
        raise DataError(f"no .glb/.gltf files under {in_dir}")
    records = curate_directory(in_dir, cfg.curate, threads)
    readable = [r for r in records if r.verdict != "rejected:io"]
    write_run_info(out_dir, "curate", cfg, {"in_dir": str(in_dir)})
    write_manifest(out_dir / "manifest.jsonl", records, cfg.curate)
    summary = summarize(records)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"kept {summary['kept']} / {summary['total']}")
    for n, c in summary["part_count_histogram"].items():
        click.echo(f"  N={n}: {c}")
    if not readable:
        raise DataError("none of the input files could be read")
    return EXIT_OK


def cmd_toygen(out_dir, cfg: RunConfig) -> int:
    out_dir = Path(out_dir)
    tg = cfg.toygen
    records = generate_toy_set([int(n) for n in tg.part_counts], tg.per_count, cfg.seed, tuple(tg.kinds))
    write_run_info(out_dir, "toygen", cfg)
    write_toy_archive(out_dir, records, {"seed": cfg.seed, **asdict(tg)})
    counts: dict[int, int] = {}
    for r in records:
        counts[r.N] = counts.get(r.N, 0) + 1
    for n in sorted(counts):
        click.echo(f"N={n}: {counts[n]}")
    click.echo(f"total: {len(records)}")
    return EXIT_OK


def load_assets(source) -> list[tuple[str, CanonicalAsset]]:
    """Assets from a toy archive (``manifest.jsonl``) or from a directory of part directories."""
    source = Path(source)
    if (source / "manifest.jsonl").exists():
        return [(r.asset_id, r.asset) for r in load_toy_archive(source)]
    if not source.is_dir():
        raise DataError(f"{source} is neither a toy archive nor a directory")
    if any(p.stem.startswith("part_") for p in source.iterdir()):
        return [(source.name, load_part_dir(source))]
    out = [(d.name, load_part_dir(d)) for d in sorted(source.iterdir()) if d.is_dir()]
    out = [(a, asset) for a, asset in out if asset.N]
    if not out:
        raise DataError(f"no assets found under {source}")
    return out


def _write_trace(path: Path, trace) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "loss", "t_mean", "n_hist"])
    for row in trace:
        w.writerow([row["step"], repr(row["loss"]), repr(row["t_mean"]), row["n_hist"]])
    path.write_text(buf.getvalue(), encoding="utf-8")


def cmd_train(cfg: RunConfig, out_dir, data_dir=None, resume=None) -> Path:
    out_dir = Path(out_dir)
    data_dir = data_dir or cfg.data.train_dir
    if data_dir is None:
        raise ConfigError("no training data: pass --data or set data.train_dir")
    assets = load_assets(data_dir)
    if cfg.data.limit is not None:
        assets = assets[:cfg.data.limit]
    mc = cfg.model
    too_big = [a for a, asset in assets if asset.N > mc.max_parts]
    if too_big:
        raise DataError(f"{len(too_big)} assets exceed max_parts={mc.max_parts}, e.g. {too_big[0]}")
    examples = build_examples([a for _, a in assets], mc.tokens_per_part, mc.latent_dim, mc.cond_width,
                              seed=cfg.data.encode_seed, ids=[i for i, _ in assets])
    plan = cfg.train
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.model.config.to_dict() != mc.to_dict():
            raise ConfigError("resumed checkpoint was trained with a different model config")
        if ck.optimizer is None:
            raise DataError(f"{resume} holds no optimizer state")
        model = ck.model
        opt = Adam(model.params, plan.lr, plan.beta1, plan.beta2, plan.eps, float32_state=True)
        opt.load_state(ck.optimizer)
        state = TrainState(ck.step, opt, list(ck.extra.get("trace", [])))
    else:
        model = Denoiser.create(mc, cfg.seed)
        for p in model.params.values():
            p.data = p.data.astype(np.float32).astype(np.float64)
        state = None
    write_run_info(out_dir, "train", cfg, {"data": str(data_dir), "resume": str(resume) if resume else None})

    def progress(row):
        if row["step"] % 100 == 0:
            log.info("step %d loss %.6f", row["step"], row["loss"])

    state = train(examples, plan, model, state, on_step=progress, float32_state=True)
    _write_trace(out_dir / "loss.csv", state.trace)
    ckpt = save_checkpoint(out_dir / "checkpoint.pfck", model, cfg.seed, state.step, state.optimizer,
                           extra={"trace": state.trace, "n_histogram": n_histogram(state.trace)})
    click.echo(str(ckpt))
    return ckpt


def sample_assets(model: Denoiser, conds: list[np.ndarray], Ns: list[int], num_steps: int, seed: int,
                  batch_size: int = 16):
    """Sample one asset per (condition, N). Noise for item (i, N) comes from ``default_rng([seed, i, N])``."""
    out = {}
    scfg = SamplerConfig(num_steps)
    K, C = model.config.tokens_per_part, model.config.latent_dim
    for N in Ns:
        for start in range(0, len(conds), batch_size):
            idx = list(range(start, min(start + batch_size, len(conds))))
            init = np.stack([np.random.default_rng([seed, i, N]).standard_normal((N * K, C)) for i in idx])
            lats = euler_sample_batch(np.stack([conds[i] for i in idx]), N, model, scfg, init=init)
            for i, lat in zip(idx, lats):
                out[(i, N)] = lat
    return out


def cmd_sample(checkpoint, source, Ns, out_dir, cfg: RunConfig) -> int:
    out_dir = Path(out_dir)
    ck = load_checkpoint(checkpoint)
    model = ck.model
    assets = load_assets(source)
    if cfg.data.limit is not None:
        assets = assets[:cfg.data.limit]
    for n in Ns or []:
        if n < 1 or n > model.config.max_parts:
            raise ConfigError(f"N={n} outside [1, {model.config.max_parts}]")
    conds = [encode_condition(a, model.config.cond_width).tokens for _, a in assets]
    write_run_info(out_dir, "sample", cfg, {"checkpoint": str(checkpoint), "source": str(source),
                                           "N": list(Ns) if Ns else None})
    wanted = sorted(set(Ns)) if Ns else sorted({a.N for _, a in assets})
    lats = sample_assets(model, conds, wanted, cfg.sampler.num_steps, cfg.seed)
    written = 0
    for i, (aid, asset) in enumerate(assets):
        for N in (wanted if Ns else [asset.N]):
            d = out_dir / aid / f"n{N}"
            d.mkdir(parents=True, exist_ok=True)
            pts = decode_points(lats[(i, N)])
            for j, p in enumerate(pts):
                write_ply(d / f"part_{j:02d}.ply", p)
            write_ply(d / "assembly.ply", np.concatenate(pts))
            written += 1
    click.echo(f"sampled {written} assets into {out_dir}")
    return EXIT_OK


_N_DIR = re.compile(r"^n\d+$")


def _prediction_sets(pred_dir: Path):
    """Yield (key, asset_id, [part files]) for every predicted asset."""
    for adir in sorted(p for p in pred_dir.iterdir() if p.is_dir()):
        direct = sorted(f for f in adir.iterdir() if f.is_file() and f.stem.startswith("part_"))
        if direct:
            yield adir.name, adir.name, direct
        for ndir in sorted((p for p in adir.iterdir() if p.is_dir() and _N_DIR.match(p.name)),
                           key=lambda p: int(p.name[1:])):
            files = sorted(f for f in ndir.iterdir() if f.is_file() and f.stem.startswith("part_"))
            if files:
                yield f"{adir.name}/{ndir.name}", adir.name, files


def evaluate_parts(pred_parts, gt: CanonicalAsset, n_points: int, tau: float, R: int, seed: int) -> dict:
    """CD and F-score of the assembled prediction against the ground-truth
    assembly, plus mean pairwise IoU over the predicted parts.

    A predicted part is either a mesh (sampled and voxelized as a solid) or a
    point set (used as-is, voxelized through its convex hull).
    """
    gt_pts = sample_surface(gt.assembled(), n_points, seed=seed).points
    is_mesh = all(len(m.faces) for m in pred_parts)
    if is_mesh:
        pred_pts = sample_surface(assemble(pred_parts), n_points, seed=seed).points
        grids = [voxelize_solid(m, R) for m in pred_parts]
    else:
        pred_pts = np.concatenate([m.vertices for m in pred_parts])
        grids = [voxelize_points(m.vertices, R) for m in pred_parts]
    return {"cd": chamfer(pred_pts, gt_pts), "f_score": f_score(pred_pts, gt_pts, tau),
            "iou": pairwise_iou(grids), "n_parts": len(pred_parts)}


def cmd_eval(pred_dir, gt_dir, out_json, cfg: RunConfig) -> int:
    pred_dir, out_json = Path(pred_dir), Path(out_json)
    if not pred_dir.is_dir():
        raise DataError(f"{pred_dir} is not a directory")
    gt = dict(load_assets(gt_dir))
    mc = cfg.metrics
    report = MetricsReport(mc.n_points, mc.resolution, mc.tau)
    for key, aid, files in _prediction_sets(pred_dir):
        if aid not in gt:
            log.warning("no ground truth for %s; skipped", aid)
            continue
        res = evaluate_parts([load_mesh(f) for f in files], gt[aid], mc.n_points, mc.tau, mc.resolution, cfg.seed)
        report.add(key, res["cd"], res["f_score"], res["iou"], {"surface": cfg.seed}, n_parts=res["n_parts"])
    if not report.assets:
        raise DataError("no predictions matched the ground truth")
    write_run_info(out_json.parent, "eval", cfg, {"pred_dir": str(pred_dir), "gt_dir": str(gt_dir)})
    out_json.write_text(report.to_json() + "\n", encoding="utf-8")
    s = report.summary()
    click.echo(f"CD {s['CD']:.6f}  F-Score {s['F-Score']:.6f}  IoU {s['IoU']:.6f}  ({s['count']} assets)")
    return EXIT_OK


# --- click wiring ---------------------------------------------------------

class _Ctx:
    def __init__(self, config, seed, threads, out):
        self.cfg = with_seed(load_config(config), seed)
        self.threads = threads
        self.out = Path(out) if out else None

    def out_dir(self, default: str) -> Path:
        return self.out if self.out is not None else Path(default)


@click.group()
@click.option("--config", type=click.Path(dir_okay=False), default=None, help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Worker cap.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.version_option(__version__, prog_name="partforge")
@click.pass_context
def cli(ctx, config, seed, threads, out):
    """Part-aware latent flow matching at desk scale."""
    ctx.obj = _Ctx(config, seed, threads, out)


@cli.command()
@click.argument("in_dir", type=click.Path())
@click.pass_obj
def curate(obj: _Ctx, in_dir):
    """Filter GLTF/GLB assets into a JSONL manifest."""
    cmd_curate(in_dir, obj.out_dir("curated"), obj.cfg, obj.threads)


@cli.command()
@click.argument("spec_file", type=click.Path(dir_okay=False), required=False)
@click.pass_obj
def toygen(obj: _Ctx, spec_file):
    """Generate a synthetic multi-part toy archive.

    SPEC_FILE, if given, is a YAML mapping with the keys of the ``toygen``
    config section and overrides it.
    """
    cfg = obj.cfg
    if spec_file:
        try:
            data = yaml.safe_load(Path(spec_file).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read toy spec {spec_file}: {exc}") from exc
        cfg.toygen = build_section(ToygenConfig, data, "toy spec")
    cmd_toygen(obj.out_dir("toys"), cfg)


@cli.command("train")
@click.option("--data", "data_dir", type=click.Path(), default=None, help="Toy archive or part directories.")
@click.option("--resume", type=click.Path(dir_okay=False), default=None, help="Checkpoint to continue from.")
@click.pass_obj
def train_cmd(obj: _Ctx, data_dir, resume):
    """Train the denoiser with rectified flow matching."""
    cmd_train(obj.cfg, obj.out_dir("run"), data_dir, resume)


@cli.command()
@click.argument("checkpoint", type=click.Path(dir_okay=False))
@click.option("--cond", "source", type=click.Path(), required=True, help="Assets whose silhouettes condition sampling.")
@click.option("-n", "--parts", "Ns", type=int, multiple=True, help="Part count(s); default: each asset's own N.")
@click.pass_obj
def sample(obj: _Ctx, checkpoint, source, Ns):
    """Sample part point sets from a checkpoint."""
    cmd_sample(checkpoint, source, list(Ns), obj.out_dir("samples"), obj.cfg)


@cli.command("eval")
@click.argument("pred_dir", type=click.Path())
@click.argument("gt_dir", type=click.Path())
@click.option("--json", "out_json", type=click.Path(dir_okay=False), default=None, help="Metrics file.")
@click.pass_obj
def eval_cmd(obj: _Ctx, pred_dir, gt_dir, out_json):
    """Score predictions: CD, F-Score and part IoU."""
    out_json = Path(out_json) if out_json else obj.out_dir("eval") / "metrics.json"
    cmd_eval(pred_dir, gt_dir, out_json, obj.cfg)


def _setup_logging() -> None:
    level = os.environ.get("PARTFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        cli.main(args=argv, prog_name="partforge", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    except (PartforgeError, OSError, ValueError) as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
