"""Command-line pipeline: caption generation, benchmark builds,
evaluation, statistics, and vocabulary-size sweep plots.

Exit codes: 0 success, 1 usage, 2 input validation, 3 backend I/O.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .benchkit import (
    BENCHMARK_NAMES,
    Benchmark,
    assemble_benchmark,
    bucket_by_caption_length,
    compute_stats,
    filter_max_tokens,
    format_stats_table,
    load_benchmark,
    save_benchmark,
)
from .captiongen import (
    create_caption,
    load_backend,
    load_captions,
    load_examples,
    propagate_captions,
    write_captions,
    write_transcript,
)
from .errors import (
    BackendError,
    ConfigurationError,
    DegenerateObjectError,
    FgovdError,
    InputValidationError,
    TaxonomyError,
)
from .metrics import EvalReport, evaluate_benchmark, read_predictions, write_predictions
from .negatives import NegativeSpec
from .plots import save_rank_histogram, save_sweep_figure
from .synthdet import SynthProfile, run_synth
from .taxonomy import load_annotations, load_taxonomy

log = logging.getLogger("fgovd.cli")

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_BACKEND = 3


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _provenance(config: dict, seed: int | None = None) -> dict:
    meta = {"tool": "fgovd", "version": __version__, "config_hash": config_hash(config)}
    if seed is not None:
        meta["seed"] = seed
    return meta


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100.0 * value:.1f}"


def format_report(report: EvalReport, *, by_size: bool = False) -> str:
    lines = [
        f"benchmark: {report.meta.get('benchmark', '?')}",
        f"images: {report.n_images}  groups: {report.n_groups}  "
        f"objects: {report.n_objects}",
        f"mAP@[.50:.95]: {_pct(report.ap.map)}",
        f"AP@0.50:      {_pct(report.ap.ap50)}",
    ]
    if by_size:
        lines.append(
            "mAP by size:  S "
            + _pct(report.ap.map_small)
            + "  M "
            + _pct(report.ap.map_medium)
            + "  L "
            + _pct(report.ap.map_large)
        )
    median = report.rank.median
    lines.append(
        f"median rank:  {median if median is not None else '-'} "
        f"(evaluated {report.rank.evaluated}, skipped {report.rank.skipped})"
    )
    return "\n".join(lines)


@click.group(name="fgovd")
@click.version_option(version=__version__)
def cli():
    """Build and evaluate fine-grained detection benchmarks with dynamic
    per-object vocabularies."""


@cli.command("generate-captions")
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", type=click.Path(), default=None)
@click.option("--backend-profile", type=click.Path(exists=True), default=None,
              help="Backend profile file; defaults to the offline template backend.")
@click.option("--examples", "examples_path", type=click.Path(exists=True), default=None,
              help="JSON file with the 4 in-context structure/caption pairs.")
@click.option("--iterations", type=int, default=1, show_default=True)
@click.option("--max-words", type=int, default=60, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_generate_captions(annotations, taxonomy, backend_profile, examples_path,
                          iterations, max_words, out):
    """Generate one positive caption per annotated object."""
    out_dir = Path(out)
    tax = load_taxonomy(taxonomy)
    annotation_set = load_annotations(annotations, tax)
    client = load_backend(backend_profile)
    examples = load_examples(examples_path) if examples_path else None

    rows: list[dict] = []
    rejections: list[dict] = []
    accepted = 0
    for image in annotation_set.images:
        captions = {}
        for obj in image.objects:
            outcome = create_caption(
                obj,
                client,
                n_iterations=iterations,
                examples=examples,
                max_words=max_words,
            )
            write_transcript(
                outcome.transcript, out_dir / "transcripts" / f"{obj.object_id}.jsonl"
            )
            if outcome.accepted:
                captions[obj.object_id] = outcome.caption
                accepted += 1
            else:
                rejections.append(
                    {
                        "object_id": obj.object_id,
                        "image_id": image.image_id,
                        "issues": [int(code) for code in outcome.issues],
                    }
                )
        captions = propagate_captions(image, captions)
        by_id = {o.object_id: o for o in image.objects}
        for object_id in sorted(captions):
            caption = captions[object_id]
            rows.append(
                {
                    "object_id": object_id,
                    "image_id": image.image_id,
                    "category": by_id[object_id].category,
                    "text": caption.text,
                    "provenance": caption.provenance,
                    "source_object_id": caption.source_object_id,
                }
            )
    write_captions(out_dir / "captions.jsonl", rows)
    config = {
        "annotations": annotations,
        "iterations": iterations,
        "max_words": max_words,
    }
    _write_json(
        out_dir / "rejections.json",
        {
            "meta": _provenance(config),
            "rejections": rejections,
            "skipped_annotations": annotation_set.skipped,
        },
    )
    click.echo(
        f"captions: {accepted} generated, {len(rows) - accepted} propagated, "
        f"{len(rejections)} rejected -> {out_dir / 'captions.jsonl'}"
    )


def _build_one(
    name: str,
    images,
    captions,
    tax,
    n: int,
    seed: int,
    k_override: int | None,
    trivial_same_class_ok: bool,
    out_dir: Path,
) -> tuple[str, Benchmark]:
    spec = NegativeSpec.from_name(name, n, seed)
    if k_override is not None and spec.kind == "difficulty":
        spec = NegativeSpec(kind="difficulty", n=n, seed=seed, k=k_override)
    result = assemble_benchmark(
        images,
        captions,
        spec,
        tax,
        trivial_same_category_ok=trivial_same_class_ok,
    )
    benchmark = result.benchmark
    benchmark.meta["provenance"] = _provenance(
        {"strategy": name, "n": n, "seed": seed}, seed=seed
    )
    path = out_dir / f"benchmark_{name}.json"
    save_benchmark(benchmark, path)
    if result.exclusions:
        _write_json(out_dir / f"exclusions_{name}.json", result.exclusions)
    stats = compute_stats(benchmark)
    click.echo(
        f"{name}: {stats.images} imgs, {stats.objects} objs, "
        f"{stats.positives} positives -> {path}"
    )
    return name, benchmark


@cli.command("build")
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--captions", "captions_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", type=click.Path(), default=None)
@click.option("--strategy", default="hard", show_default=True,
              type=click.Choice([*BENCHMARK_NAMES, "all"]))
@click.option("--k", type=click.IntRange(1, 3), default=None,
              help="Override the attribute count for difficulty strategies.")
@click.option("--n", type=int, default=10, show_default=True,
              help="Requested negatives per positive caption.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trivial-same-class-ok", is_flag=True, default=False,
              help="Let trivial negatives come from same-category objects.")
@click.option("--out", required=True, type=click.Path())
def cmd_build(annotations, captions_path, taxonomy, strategy, k, n, seed,
              trivial_same_class_ok, out):
    """Assemble benchmark files for one strategy or all eight."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tax = load_taxonomy(taxonomy)
    annotation_set = load_annotations(annotations, tax)
    captions = load_captions(captions_path)
    names = list(BENCHMARK_NAMES) if strategy == "all" else [strategy]
    for name in names:
        _build_one(
            name,
            annotation_set.images,
            captions,
            tax,
            n,
            seed,
            k,
            trivial_same_class_ok,
            out_dir,
        )


def _filter_predictions(pf, benchmark: Benchmark):
    from .metrics import PredictionFile

    group_ids = set(benchmark.group_index())
    return PredictionFile(
        mode=pf.mode,
        vector=[p for p in pf.vector if p.group_id in group_ids],
        per_caption=[p for p in pf.per_caption if p.group_id in group_ids],
    )


def _evaluate_once(
    benchmark: Benchmark, pf, nms_iou: float, max_dets: int | None = None
) -> EvalReport:
    if pf.mode == "vector":
        return evaluate_benchmark(
            benchmark, vector_preds=pf.vector, nms_iou=nms_iou, max_dets=max_dets
        )
    return evaluate_benchmark(
        benchmark, per_caption_preds=pf.per_caption, nms_iou=nms_iou,
        max_dets=max_dets,
    )


@cli.command("evaluate")
@click.option("--benchmark", "benchmark_path", required=True,
              type=click.Path(exists=True))
@click.option("--predictions", required=True, type=click.Path(exists=True))
@click.option("--owl-subset", is_flag=True, default=False,
              help="Drop groups with captions over the token limit first.")
@click.option("--token-limit", type=int, default=16, show_default=True)
@click.option("--by-size", is_flag=True, default=False)
@click.option("--by-length", is_flag=True, default=False)
@click.option("--nms-iou", type=float, default=0.5, show_default=True)
@click.option("--max-dets", type=int, default=None,
              help="Cap kept detections per image (COCO uses 100).")
@click.option("--out", required=True, type=click.Path())
def cmd_evaluate(benchmark_path, predictions, owl_subset, token_limit, by_size,
                 by_length, nms_iou, max_dets, out):
    """Score a predictions file against a benchmark."""
    out_dir = Path(out)
    benchmark = load_benchmark(benchmark_path)
    pf = read_predictions(predictions, benchmark=benchmark)
    if owl_subset:
        benchmark = filter_max_tokens(benchmark, limit=token_limit)
        pf = _filter_predictions(pf, benchmark)

    config = {
        "benchmark": benchmark_path,
        "predictions": predictions,
        "owl_subset": owl_subset,
        "token_limit": token_limit,
        "nms_iou": nms_iou,
        "max_dets": max_dets,
    }
    report = _evaluate_once(benchmark, pf, nms_iou, max_dets)
    report.meta.update(_provenance(config))
    _write_json(out_dir / "report.json", report.to_dict())
    with (out_dir / "ranks.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "group_id", "object_id", "rank"])
        writer.writerows(report.rank.ranks)
    if report.rank.ranks:
        save_rank_histogram(
            [r[3] for r in report.rank.ranks], out_dir / "ranks.svg"
        )
    click.echo(format_report(report, by_size=by_size))

    if by_length:
        for bucket, sub in bucket_by_caption_length(benchmark).items():
            sub_pf = _filter_predictions(pf, sub)
            sub_report = _evaluate_once(sub, sub_pf, nms_iou, max_dets)
            sub_report.meta.update(_provenance({**config, "bucket": bucket}))
            _write_json(out_dir / f"report_{bucket}.json", sub_report.to_dict())
            click.echo(f"\n[{bucket}]")
            click.echo(format_report(sub_report, by_size=by_size))


@cli.command("stats")
@click.option("--benchmark", "benchmark_paths", required=True, multiple=True,
              type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None)
def cmd_stats(benchmark_paths, out):
    """Statistics table for one or more benchmark files."""
    named = []
    for path in benchmark_paths:
        benchmark = load_benchmark(path)
        named.append((benchmark.name, compute_stats(benchmark)))
    click.echo(format_stats_table(named))
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "stats.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["name", "imgs", "objs", "obj_per_img", "pos_caps",
                 "pos_per_img", "neg_per_pos", "objs_per_pos"]
            )
            for name, stats in named:
                writer.writerow([name, *stats.as_row()])
        click.echo(f"wrote {out_dir / 'stats.csv'}")


@cli.command("plot")
@click.option("--annotations", required=True, type=click.Path(exists=True))
@click.option("--captions", "captions_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", type=click.Path(), default=None)
@click.option("--strategy", default="hard", show_default=True,
              type=click.Choice(list(BENCHMARK_NAMES)))
@click.option("--n-sweep", default="2,5,10", show_default=True,
              help="Comma-separated vocabulary sizes to sweep.")
@click.option("--synth", default="perfect,random,noisy:0.7:0.15", show_default=True,
              help="Comma-separated synthetic detector profiles.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cmd_plot(annotations, captions_path, taxonomy, strategy, n_sweep, synth, seed, out):
    """Re-assemble negatives over a sweep of N and plot mAP/rank curves."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tax = load_taxonomy(taxonomy)
    annotation_set = load_annotations(annotations, tax)
    captions = load_captions(captions_path)
    try:
        sweep = [int(v) for v in n_sweep.split(",") if v.strip()]
        profiles = [
            SynthProfile.parse(text.strip(), seed=seed)
            for text in synth.split(",")
            if text.strip()
        ]
    except (ValueError, ConfigurationError) as exc:
        raise click.UsageError(str(exc)) from exc

    rows = []
    for n in sweep:
        spec = NegativeSpec.from_name(strategy, n, seed)
        benchmark = assemble_benchmark(
            annotation_set.images, captions, spec, tax
        ).benchmark
        for profile in profiles:
            preds = run_synth(benchmark, profile)
            report = evaluate_benchmark(benchmark, vector_preds=preds)
            rows.append(
                {
                    "source": profile.kind,
                    "n": n,
                    "map": report.ap.map,
                    "median_rank": report.rank.median,
                }
            )
    with (out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "n", "map", "median_rank"])
        for row in rows:
            writer.writerow([row["source"], row["n"], row["map"], row["median_rank"]])
    save_sweep_figure(rows, out_dir / "sweep.svg")
    click.echo(f"wrote {out_dir / 'sweep.csv'} and {out_dir / 'sweep.svg'}")


def main(argv=None) -> None:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_USAGE)
    except (InputValidationError, TaxonomyError, DegenerateObjectError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    except FgovdError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    sys.exit(0)


if __name__ == "__main__":
    main()
