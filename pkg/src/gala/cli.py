"""Command-line entry points: corpus synthesis, ingestion, training, index
building, querying, placement, evaluation, and the HTTP service."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import click
import numpy as np

from .core import BackgroundQuery, BoundingBox, ImageTensor
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .placement import PlacementConfig, place_auto
from .retrieval import build_index, load_index, query_topk, save_index
from .training import TrainConfig, TowerPair, train_model, write_log
from . import dataset, evaluation, imops, synthetic


def _load_towers(weights_dir) -> TowerPair:
    weights_dir = Path(weights_dir)
    return TowerPair(
        background=load_checkpoint(weights_dir / "background.gala"),
        foreground=load_checkpoint(weights_dir / "foreground.gala"),
    )


@click.group()
def main():
    """Compositing-aware foreground object search toolkit."""


@main.command()
@click.option("--n", default=500, show_default=True, help="Number of scenes.")
@click.option("--seed", default=7, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--canvas", default=synthetic.CANVAS_DEFAULT, show_default=True)
def synth(n, seed, out_dir, canvas):
    """Generate a synthetic corpus of shaded-shape scenes."""
    listing = synthetic.write_corpus(out_dir, n=n, seed=seed, canvas=canvas)
    click.echo(f"wrote {listing}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_manifest", required=True, type=click.Path())
@click.option("--min-conf", default=0.6, show_default=True)
@click.option("--area-min", default=0.05, show_default=True)
@click.option("--area-max", default=0.5, show_default=True)
@click.option("--split", "train_fraction", default=0.9, show_default=True)
@click.option("--seed", default=0, show_default=True)
def ingest(corpus_dir, out_manifest, min_conf, area_min, area_max, train_fraction, seed):
    """Filter a corpus and extract (background, foreground) pairs."""
    manifest = dataset.ingest_corpus(
        corpus_dir,
        out_manifest,
        min_conf=min_conf,
        area_range=(area_min, area_max),
        train_fraction=train_fraction,
        seed=seed,
    )
    click.echo(f"wrote {out_manifest}: {len(manifest.records)} pairs, stats {manifest.stats}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--rounds", default=1, show_default=True)
@click.option("--margin-t", default=0.3, show_default=True)
@click.option("--margin-c", default=0.1, show_default=True)
@click.option("--lr", default=8e-5, show_default=True)
@click.option("--batch-size", default=40, show_default=True)
@click.option("--epochs", default=30, show_default=True)
@click.option("--no-contrastive", is_flag=True, help="Drop the transformed-negative loss term.")
@click.option("--no-alternating", is_flag=True, help="Train both towers jointly in one stage.")
@click.option("--no-mask-aug", is_flag=True, help="Disable mask erosion / box extension.")
@click.option("--compose-transforms", is_flag=True, help="Apply geometry and lighting in sequence.")
@click.option("--reverse-order", is_flag=True, help="Start the alternating schedule from the foreground tower.")
@click.option("--embed-dim", default=128, show_default=True)
@click.option("--input-size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train(
    manifest_path,
    out_dir,
    rounds,
    margin_t,
    margin_c,
    lr,
    batch_size,
    epochs,
    no_contrastive,
    no_alternating,
    no_mask_aug,
    compose_transforms,
    reverse_order,
    embed_dim,
    input_size,
    seed,
):
    """Train the two towers on an ingested manifest."""
    manifest = dataset.load_manifest(manifest_path)
    pairs = dataset.load_pairs(manifest, Path(manifest_path).parent, split="train")
    cfg = TrainConfig(
        margin_t=margin_t,
        margin_c=margin_c,
        lr=lr,
        batch_size=batch_size,
        rounds=rounds,
        epochs=epochs,
        contrastive=not no_contrastive,
        alternating=not no_alternating,
        mask_aug=not no_mask_aug,
        compose_transforms=compose_transforms,
        reverse_order=reverse_order,
        encoder=EncoderConfig(embed_dim=embed_dim, input_size=input_size),
    )
    log: list = []
    towers = train_model(pairs, cfg, seed=seed, log=log)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(towers.background, out_dir / "background.gala")
    save_checkpoint(towers.foreground, out_dir / "foreground.gala")
    write_log(log, out_dir / "train_log.jsonl")
    click.echo(f"trained on {len(pairs)} pairs; checkpoints in {out_dir}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", default="eval", show_default=True, type=click.Choice(["train", "eval", "all"]))
def embed(manifest_path, weights_dir, out_path, split):
    """Embed the gallery foregrounds into a searchable index."""
    manifest = dataset.load_manifest(manifest_path)
    root = Path(manifest_path).parent
    entries = manifest.records if split == "all" else manifest.split_records(split)
    pairs = [dataset.load_pair(e, root) for e in entries]
    towers_fg = load_checkpoint(Path(weights_dir) / "foreground.gala")
    extra = {
        e.pair_id: {"thumbnail_path": e.fg_path, "mask_path": e.mask_path, "category": e.category}
        for e in entries
    }
    index = build_index([p.foreground for p in pairs], towers_fg, extra_meta=extra)
    save_index(index, out_path)
    click.echo(f"wrote {out_path}: {index.size} x {index.dim}")


def _parse_box_option(text) -> BoundingBox | None:
    if not text:
        return None
    l, t, w, h = (int(v) for v in text.split(","))
    return BoundingBox(l, t, w, h)


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_dir", required=True, type=click.Path(exists=True))
@click.option("--bg", "bg_path", required=True, type=click.Path(exists=True))
@click.option("--box", default="", help="l,t,w,h in pixels; omit for non-box search.")
@click.option("--k", default=10, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True, help="Seed for the non-box search.")
def query(index_path, weights_dir, bg_path, box, k, out_path, seed):
    """Rank gallery objects for a background image (with or without a box)."""
    index = load_index(index_path)
    towers = _load_towers(weights_dir)
    image = ImageTensor(imops.load_image(bg_path))
    parsed = _parse_box_option(box)
    payload: dict = {}
    if parsed is None:
        placed = place_auto(image, index, towers, PlacementConfig(), seed=seed)
        parsed = placed.box
        payload["box"] = parsed.as_list()
        payload["heatmap_png_b64"] = base64.b64encode(imops.encode_png(placed.heatmap)).decode()
    filled = image.data.copy()
    filled[parsed.top : parsed.bottom, parsed.left : parsed.right] = image.data.reshape(-1, 3).mean(axis=0)
    bg = BackgroundQuery(id=Path(bg_path).stem, image=ImageTensor(filled), box=parsed)
    result = query_topk(bg, index, min(k, index.size), towers.background)
    payload["results"] = [{"id": i, "score": s} for i, s in result.ranked]
    Path(out_path).write_text(json.dumps(payload, indent=2))
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_dir", required=True, type=click.Path(exists=True))
@click.option("--bg", "bg_path", required=True, type=click.Path(exists=True))
@click.option("--grid", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def place(index_path, weights_dir, bg_path, grid, seed, out_path):
    """Non-box pipeline: choose an object, locate it, and scale it."""
    index = load_index(index_path)
    towers = _load_towers(weights_dir)
    image = ImageTensor(imops.load_image(bg_path))
    cfg = PlacementConfig(grid_k=grid)
    result = place_auto(image, index, towers, cfg, seed=seed)
    payload = {
        "object_id": result.object_id,
        "box": result.box.as_list(),
        "grid_scores": result.grid_scores.tolist(),
        "scale_scores": result.scale_scores.tolist(),
        "heatmap_png_b64": base64.b64encode(imops.encode_png(result.heatmap)).decode(),
        "degenerate": result.degenerate,
    }
    Path(out_path).write_text(json.dumps(payload, indent=2))
    click.echo(f"wrote {out_path}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--weights", "weights_dir", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", type=click.Path(exists=True), help="Unused for now; evaluation embeds the eval split itself.")
@click.option("--metrics", default="map,recall", show_default=True)
@click.option("--sensitivity-transforms", default=20, show_default=True)
@click.option("--out", "out_path", default="", help="Write the report JSON here (default: stdout).")
def eval_cmd(manifest_path, weights_dir, index_path, metrics, sensitivity_transforms, out_path):
    """Compute retrieval / sensitivity / placement metrics on the eval split."""
    manifest = dataset.load_manifest(manifest_path)
    pairs = dataset.load_pairs(manifest, Path(manifest_path).parent, split="eval")
    towers = _load_towers(weights_dir)
    wanted = {m.strip() for m in metrics.split(",") if m.strip()}
    report: dict = {}
    if wanted & {"map", "recall"}:
        retrieval = evaluation.retrieval_eval(pairs, towers)
        if "map" in wanted:
            report["map"] = retrieval["map"]
            report["per_category"] = retrieval["per_category"]
        if "recall" in wanted:
            report["recall"] = {str(k): v for k, v in retrieval["recall"].items()}
            report["recall_1pct"] = retrieval["recall_1pct"]
    if "sensitivity" in wanted:
        report["sensitivity"] = {}
        for kind in ("geometry", "lighting"):
            rep = evaluation.sensitivity_eval(pairs, towers, kind, m_transforms=sensitivity_transforms)
            report["sensitivity"][kind] = {
                "mean": rep.mean_sensitivity,
                "recall_at": {str(k): v for k, v in rep.recall_at.items()},
                "degenerate": rep.degenerate,
            }
    if "placement" in wanted:
        placement = evaluation.placement_eval(pairs, towers)
        report["placement"] = {
            "ns_thresholds": placement["ns_thresholds"],
            "iou_thresholds": placement["iou_thresholds"],
            "degenerate_grids": placement["degenerate_grids"],
        }
    text = json.dumps(report, indent=2)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


@main.command()
@click.option("--index", "index_path", type=click.Path(exists=True), envvar="GALA_INDEX")
@click.option("--weights", "weights_dir", type=click.Path(exists=True), envvar="GALA_WEIGHTS")
@click.option("--port", default=8000, show_default=True, envvar="GALA_PORT", type=int)
@click.option("--grid", default=10, show_default=True, envvar="GALA_GRID_K", type=int)
@click.option("--ui-dir", default="", help="Serve a built frontend from /ui.")
def serve(index_path, weights_dir, port, grid, ui_dir):
    """Run the HTTP query service."""
    import uvicorn

    from .service import ServiceState, create_app

    state = ServiceState(placement=PlacementConfig(grid_k=grid))
    if index_path:
        state.index = load_index(index_path)
        state.root = Path(index_path).resolve().parent
    if weights_dir:
        state.background = load_checkpoint(Path(weights_dir) / "background.gala")
    uvicorn.run(create_app(state, ui_dir=ui_dir or None), host="0.0.0.0", port=port)


if __name__ == "__main__":
    main()
