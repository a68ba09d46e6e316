"""Command-line entry points for evaluation, statistics, splitting,
augmentation, the annotation pipeline, and the review service."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import cv2
import numpy as np

from . import augment as aug
from .datamodel import (
    BBox,
    Dataset,
    DatasetParseError,
    DatasetValidationError,
    GroundTruthAnnotation,
    ImageRecord,
    load_dataset,
    load_detections,
    save_dataset,
)
from .decisionlog import DecisionLog
from .geometry import BitMask, rle_decode, rle_encode
from .metrics import EvalConfig, evaluate, format_report_table
from .ontology import Ontology
from .oracles import (
    HttpBoxOracle,
    HttpLabelOracle,
    HttpMaskOracle,
    MockBoxOracle,
    MockLabelOracle,
    MockMaskOracle,
    OracleSet,
    ScoredBox,
)
from .pipeline import (
    APPROVED,
    AUTO_REJECTED,
    AWAITING_REVIEW,
    candidates_from_entries,
    export_dataset,
    ingest,
    run_auto_stages,
)
from .service import ReviewQueue, create_app
from .stats import (
    SplitSpec,
    class_distribution,
    mask_size_distribution,
    stratified_split,
)

DEFAULT_PORT_ENV = "DETCURATE_PORT"


@click.group()
def cli() -> None:
    """Dataset evaluation and curation toolkit."""


@cli.command("eval")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True), help="Ground-truth annotation file.")
@click.option("--dt", "dt_path", required=True, type=click.Path(exists=True), help="Detection results file.")
@click.option("--kind", type=click.Choice(["box", "mask", "both"]), default="box", show_default=True)
@click.option("--score-floor", type=float, default=0.05, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write the machine-readable report here.")
def eval_cmd(gt_path: str, dt_path: str, kind: str, score_floor: float, out_path: str | None) -> None:
    """Evaluates detections against ground truth and prints the summary row."""
    gt = load_dataset(gt_path)
    dets = load_detections(dt_path)
    kinds = ["box", "mask"] if kind == "both" else [kind]
    reports = {
        k: evaluate(gt, dets, EvalConfig(kind=k, score_floor=score_floor)) for k in kinds
    }
    click.echo(
        format_report_table(
            [(Path(dt_path).stem, reports.get("box"), reports.get("mask"))]
        )
    )
    if out_path:
        payload = {k: rep.to_json() for k, rep in reports.items()}
        Path(out_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"report written to {out_path}")


@cli.command("stats")
@click.argument("datasets", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--sizes-out", type=click.Path(), default=None, help="Write relative mask sizes per category (box-plot input).")
def stats_cmd(datasets: tuple[str, ...], sizes_out: str | None) -> None:
    """Prints per-split class distribution tables for one or more datasets."""
    loaded = {Path(p).stem: load_dataset(p) for p in datasets}
    names: dict[int, str] = {}
    for d in loaded.values():
        names.update({c.id: c.name for c in d.categories})
    dists = {split: class_distribution(d) for split, d in loaded.items()}

    name_width = max([len("category")] + [len(n) for n in names.values()])
    header = "category".ljust(name_width) + " | " + " | ".join(
        f"{split:>16}" for split in dists
    )
    click.echo(header)
    click.echo("-" * len(header))
    for cat_id in sorted(names):
        cells = []
        for dist in dists.values():
            count = dist.counts.get(cat_id, 0)
            freq = dist.frequencies.get(cat_id, 0.0)
            cells.append(f"{count:>7} ({freq:6.2%})")
        click.echo(names[cat_id].ljust(name_width) + " | " + " | ".join(cells))
    totals = " | ".join(f"{dist.total:>16}" for dist in dists.values())
    click.echo("total".ljust(name_width) + " | " + totals)

    if sizes_out:
        payload = {}
        for split, d in loaded.items():
            sizes = mask_size_distribution(d)
            payload[split] = {names.get(c, str(c)): v for c, v in sizes.items()}
        if len(payload) == 1:
            payload = next(iter(payload.values()))
        Path(sizes_out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        click.echo(f"relative sizes written to {sizes_out}")


@cli.command("split")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--fractions", default="0.539,0.060,0.401", show_default=True, help="train,val,test fractions summing to 1.")
@click.option("--seed", type=int, required=True, help="Shuffle seed; fixed seed gives a fixed split.")
@click.option("--out-dir", type=click.Path(), default=".", show_default=True)
def split_cmd(gt_path: str, fractions: str, seed: int, out_dir: str) -> None:
    """Stratified train/val/test split preserving class frequencies."""
    parts = [float(f) for f in fractions.split(",")]
    if len(parts) != 3:
        raise click.BadParameter("fractions must be three comma-separated numbers")
    d = load_dataset(gt_path)
    spec = SplitSpec(fractions=(parts[0], parts[1], parts[2]), seed=seed)
    splits = stratified_split(d, spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(gt_path).stem
    for name, split in zip(("train", "val", "test"), splits):
        path = out / f"{stem}_{name}.json"
        save_dataset(split, path)
        click.echo(f"{name}: {len(split.images)} images, {len(split.annotations)} annotations -> {path}")


def _sample_from_image(
    d: Dataset, image_id: int, images_dir: Path
) -> tuple[aug.Sample, list[GroundTruthAnnotation]]:
    image = d.image_by_id()[image_id]
    raster_bgr = cv2.imread(str(images_dir / image.file_name))
    if raster_bgr is None:
        raise click.ClickException(f"cannot read image {images_dir / image.file_name}")
    raster = cv2.cvtColor(raster_bgr, cv2.COLOR_BGR2RGB)
    anns = [a for a in d.annotations if a.image_id == image_id]
    boxes, masks, labels = [], [], []
    for a in anns:
        boxes.append(a.bbox)
        if a.mask is not None:
            masks.append(rle_decode(a.mask))
        else:
            grid = np.zeros((image.height, image.width), dtype=bool)
            y0, y1 = int(a.bbox.y), int(np.ceil(a.bbox.y + a.bbox.h))
            x0, x1 = int(a.bbox.x), int(np.ceil(a.bbox.x + a.bbox.w))
            grid[y0:y1, x0:x1] = True
            masks.append(BitMask(grid))
        labels.append(a.category_id)
    return aug.Sample(raster=raster, boxes=boxes, masks=masks, labels=labels), anns


@cli.command("augment")
@click.option("--images", "images_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, required=True)
@click.option("--prob-flip", type=float, default=0.5, show_default=True)
@click.option("--prob-photometric", type=float, default=0.5, show_default=True)
@click.option("--prob-crop", type=float, default=0.5, show_default=True)
@click.option("--prob-jitter", type=float, default=0.5, show_default=True)
@click.option("--scale-range", default="0.1,2.0", show_default=True)
@click.option("--preview", is_flag=True, help="Also write side-by-side before/after composites.")
def augment_cmd(
    images_dir: str,
    gt_path: str,
    out_dir: str,
    seed: int,
    prob_flip: float,
    prob_photometric: float,
    prob_crop: float,
    prob_jitter: float,
    scale_range: str,
    preview: bool,
) -> None:
    """Applies the augmentation pipeline to every image of a dataset."""
    lo, hi = (float(v) for v in scale_range.split(","))
    cfg = aug.AugmentConfig(
        flip_probability=prob_flip,
        photometric_probability=prob_photometric,
        crop_probability=prob_crop,
        jitter_probability=prob_jitter,
        jitter_scale_range=(lo, hi),
        seed=seed,
    )
    d = load_dataset(gt_path)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    if preview:
        (out / "preview").mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(seed)
    streams = root.spawn(len(d.images))
    new_images, new_annotations = [], []
    ann_id = 1
    for image, stream in zip(sorted(d.images, key=lambda im: im.id), streams):
        sample, _ = _sample_from_image(d, image.id, Path(images_dir))
        result = aug.apply_pipeline(sample, cfg, np.random.default_rng(stream))
        out_name = image.file_name
        cv2.imwrite(str(out / "images" / out_name), cv2.cvtColor(result.raster, cv2.COLOR_RGB2BGR))
        new_images.append(
            ImageRecord(id=image.id, width=result.width, height=result.height, file_name=out_name)
        )
        for box, mask, label in zip(result.boxes, result.masks, result.labels):
            rle = rle_encode(mask)
            new_annotations.append(
                GroundTruthAnnotation(
                    id=ann_id,
                    image_id=image.id,
                    category_id=label,
                    bbox=box,
                    area=float(rle.foreground_area()),
                    mask=rle,
                )
            )
            ann_id += 1
        if preview:
            divider = np.full((max(sample.height, result.height), 8, 3), 128, dtype=np.uint8)
            left = _pad_to_height(sample.raster, divider.shape[0])
            right = _pad_to_height(result.raster, divider.shape[0])
            composite = np.concatenate([left, divider, right], axis=1)
            cv2.imwrite(str(out / "preview" / out_name), cv2.cvtColor(composite, cv2.COLOR_RGB2BGR))

    augmented = Dataset(images=new_images, annotations=new_annotations, categories=d.categories)
    save_dataset(augmented, out / "annotations.json")
    click.echo(
        f"augmented {len(new_images)} images ({len(new_annotations)} annotations) -> {out}"
    )


def _pad_to_height(raster: np.ndarray, height: int) -> np.ndarray:
    if raster.shape[0] == height:
        return raster
    pad = np.full((height - raster.shape[0], raster.shape[1], 3), 128, dtype=np.uint8)
    return np.concatenate([raster, pad], axis=0)


def _build_oracles(config_path: str) -> OracleSet:
    cfg = json.loads(Path(config_path).read_text(encoding="utf-8"))

    def one(section: dict, kind: str):
        if section.get("type") == "http":
            cls = {"label": HttpLabelOracle, "boxes": HttpBoxOracle, "mask": HttpMaskOracle}[kind]
            return cls(url=section["url"])
        if kind == "label":
            return MockLabelOracle(table=dict(section.get("table", {})))
        if kind == "boxes":
            table = {
                path: [ScoredBox(bbox=BBox.from_list(b["bbox"]), score=float(b["score"])) for b in boxes]
                for path, boxes in section.get("table", {}).items()
            }
            return MockBoxOracle(table=table)
        return MockMaskOracle(
            extents={path: (int(hw[0]), int(hw[1])) for path, hw in section.get("extents", {}).items()}
        )

    return OracleSet(
        label=one(cfg.get("label", {}), "label"),
        boxes=one(cfg.get("boxes", {}), "boxes"),
        mask=one(cfg.get("mask", {}), "mask"),
    )


def _default_size_reader(path: str) -> tuple[int, int]:
    img = cv2.imread(path)
    if img is None:
        raise click.ClickException(f"cannot read image {path}")
    return img.shape[0], img.shape[1]


@cli.command("pipeline")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--oracles", "oracles_path", required=True, type=click.Path(exists=True), help="Oracle config JSON (mock tables or http urls).")
@click.option("--prompt", default="an object", show_default=True)
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--require-filter", is_flag=True, help="Only process images with a 'keep' filter decision in the log.")
@click.option("--no-size-check", is_flag=True, help="Skip reading images to verify mask extents.")
@click.option("--export", "export_path", type=click.Path(), default=None, help="Export approved candidates to this annotation file.")
def pipeline_cmd(
    manifest: str,
    log_path: str,
    oracles_path: str,
    prompt: str,
    workers: int,
    require_filter: bool,
    no_size_check: bool,
    export_path: str | None,
) -> None:
    """Runs the automatic annotation stages over a product manifest."""
    entries, skipped = ingest(manifest)
    for s in skipped:
        click.echo(f"skipped line {s.line_no} (product {s.product_id}): {s.reason}", err=True)
    candidates = candidates_from_entries(entries)

    with DecisionLog(log_path) as log:
        if require_filter:
            from .pipeline import STAGE_FILTER

            kept = {
                rec.candidate_id
                for rec in log.replay()
                if rec.stage == STAGE_FILTER and rec.outcome == "keep"
            }
            candidates = [c for c in candidates if c.id in kept]
        state = run_auto_stages(
            candidates,
            _build_oracles(oracles_path),
            log,
            Ontology.default(),
            prompt=prompt,
            image_size_reader=None if no_size_check else _default_size_reader,
            max_workers=workers,
        )

    counts = state.counts()
    click.echo(f"ingested products: {len(entries)} (skipped {len(skipped)})")
    click.echo(f"candidates: {len(candidates)}")
    for status in (AUTO_REJECTED, AWAITING_REVIEW, APPROVED, "flagged", "pending"):
        if counts.get(status):
            click.echo(f"  {status}: {counts[status]}")

    if export_path:
        approved = [c for c in state.candidates.values() if c.status == APPROVED]
        dataset = export_dataset(approved)
        save_dataset(dataset, export_path)
        click.echo(f"exported {len(approved)} annotations -> {export_path}")


@cli.command("serve")
@click.option("--port", type=int, default=None, help=f"Default from ${DEFAULT_PORT_ENV} or 8420.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--queue", "mode", type=click.Choice(["filter", "quality"]), required=True)
@click.option("--log", "log_path", required=True, type=click.Path())
@click.option("--manifest", type=click.Path(exists=True), default=None, help="Product manifest (either mode).")
@click.option("--images-root", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--ui-dir", type=click.Path(exists=True, file_okay=False), default=None, help="Serve the browser UI from this directory at /app.")
def serve_cmd(
    port: int | None,
    host: str,
    mode: str,
    log_path: str,
    manifest: str | None,
    images_root: str | None,
    ui_dir: str | None,
) -> None:
    """Starts the HTTP review service for one queue."""
    import uvicorn

    if port is None:
        port = int(os.environ.get(DEFAULT_PORT_ENV, "8420"))
    log = DecisionLog(log_path)
    if mode == "filter":
        if manifest is None:
            raise click.BadParameter("--manifest is required for the filter queue")
        entries, _ = ingest(manifest)
        queue = ReviewQueue.for_filtering(entries, log)
    else:
        if manifest is None:
            raise click.BadParameter("--manifest is required for the quality queue")
        entries, _ = ingest(manifest)
        from .pipeline import PipelineState

        state = PipelineState.from_log(log.replay(), candidates_from_entries(entries))
        queue = ReviewQueue.for_quality(state, log)
    app = create_app(queue, images_root=images_root)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=ui_dir, html=True), name="ui")
    click.echo(f"review service ({mode}) on http://{host}:{port} with {len(queue.items)} items")
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main() -> None:
    """Console entry point: domain errors exit 1, usage errors exit 2."""
    try:
        cli(standalone_mode=True)
    except (DatasetParseError, DatasetValidationError, ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
