"""Batch CLI: one subcommand per pipeline stage, structured JSON-line logs,
one run manifest per invocation, atomic output writes.

Exit codes: 0 success, 1 data error (machine-readable record on stderr),
2 usage error (unknown subcommand / invalid flags, raised by click).
"""

from __future__ import annotations

import hashlib
import json
import os
import resource
import sys
import time as time_mod
from pathlib import Path

import click
import numpy as np

from . import SCHEMA_VERSIONS, __version__
from .errors import DataError

MS_PER_HOUR = 3_600_000
MS_PER_SEC = 1000


def log_event(**fields) -> None:
    rec = {"ts": round(time_mod.time(), 3), **fields}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr, flush=True)


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def cache_root() -> Path | None:
    root = os.environ.get("PLACELAB_CACHE_DIR")
    return Path(root) if root else None


def resolve_dir(value: str) -> Path:
    p = Path(value)
    root = cache_root()
    if not p.is_absolute() and root is not None:
        return root / p
    return p


class _Run:
    """Collects manifest fields and times the run."""

    def __init__(self, subcommand: str, params: dict, out_dir: Path):
        self.subcommand = subcommand
        self.params = params
        self.out_dir = out_dir
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.t0 = time_mod.monotonic()

    def add_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = _sha256_file(p)
        elif p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    self.inputs[str(f)] = _sha256_file(f)

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def finish(self) -> Path:
        wall = time_mod.monotonic() - self.t0
        peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        manifest = {
            "schema_versions": SCHEMA_VERSIONS,
            "subcommand": self.subcommand,
            "params": self.params,
            "config_hash": hashlib.sha256(
                json.dumps(self.params, sort_keys=True).encode()
            ).hexdigest(),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.params.get("seed"),
            "wall_time_s": round(wall, 3),
            "peak_memory_kb": peak_kb,
        }
        path = self.out_dir / "manifest.json"
        _atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log_event(stage="done", subcommand=self.subcommand,
                  wall_time_s=round(wall, 3), peak_memory_kb=peak_kb)
        return path


def _data_errors(fn):
    """Map domain errors to exit 1 with a machine-readable record."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, ValueError, OSError) as exc:
            print(json.dumps({
                "error": type(exc).__name__,
                "message": str(exc),
            }), file=sys.stderr)
            raise SystemExit(1)

    return wrapper


def _print_version(ctx, param, value):
    if not value or ctx.resilient_parsing:
        return
    click.echo(f"placelab {__version__}")
    for k, v in SCHEMA_VERSIONS.items():
        click.echo(f"schema {k}={v}")
    ctx.exit(0)


@click.group()
@click.option("--version", is_flag=True, callback=_print_version,
              expose_value=False, is_eager=True,
              help="Print version and schema versions.")
def main():
    """Batch toolkit for collaborative-canvas action-log analytics."""


def _load_filtered_log(cache_dir: Path):
    from .ingest import ActionLog, filter_whiteout

    log = ActionLog.load(cache_dir)
    return filter_whiteout(log)


def _load_labels(path: Path, n_actions: int) -> np.ndarray:
    from .partition import Partition

    part = Partition.load_csv(path)
    labels = np.full(n_actions, -1, dtype=np.int64)
    labels[part.items] = part.labels
    return labels


# ---------------------------------------------------------------------------


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--edition", required=True, type=click.Choice(["2017", "2022", "2023"]))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--max-malformed", default=0.001, show_default=True,
              type=click.FloatRange(0, 1))
@click.option("--out", required=True)
@_data_errors
def ingest(input_path, edition, config_path, max_malformed, out):
    """Parse a raw dump into the columnar cache."""
    from .config import GameConfig
    from .ingest import parse_dump

    out_dir = resolve_dir(out)
    run = _Run("ingest", {
        "input": input_path, "edition": edition, "max_malformed": max_malformed,
    }, out_dir)
    run.add_input(input_path)
    cfg = GameConfig.load(config_path) if config_path else None
    log_event(stage="parse", input=input_path, edition=edition)
    log = parse_dump(input_path, edition, config=cfg, max_malformed_frac=max_malformed)
    log_event(stage="parsed", rows=log.n_actions, players=log.n_players,
              malformed=log.malformed_rows, reasons=log.malformed_reasons)
    log.save(out_dir)
    run.add_output(out_dir)
    run.finish()


@main.command()
@click.option("--scenario", required=True, type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--out", required=True)
@_data_errors
def synth(scenario, seed, out):
    """Generate a synthetic game with planted ground truth."""
    from .synth import generate, load_scenario, save_oracle_json, save_truth_csv

    out_dir = resolve_dir(out)
    run = _Run("synth", {"scenario": scenario, "seed": seed}, out_dir)
    run.add_input(scenario)
    sc = load_scenario(scenario, seed=seed)
    log_event(stage="generate", scenario=sc.name, seed=seed)
    log, truth, oracle = generate(sc)
    log_event(stage="generated", actions=log.n_actions, players=log.n_players)
    cache = out_dir / "cache"
    log.save(cache)
    save_truth_csv(out_dir / "truth.csv", truth)
    save_oracle_json(out_dir / "oracle.json", oracle)
    run.add_output(cache)
    run.add_output(out_dir / "truth.csv")
    run.add_output(out_dir / "oracle.json")
    run.finish()


@main.command("label-atlas")
@click.option("--cache", required=True)
@click.option("--atlas", "atlas_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True)
@_data_errors
def label_atlas(cache, atlas_path, out):
    """Label the final canvas and its actions with atlas polygons."""
    from .atlas import label_actions, label_canvas, parse_atlas
    from .ingest import canvas_at
    from .metrics import coalition_records
    from .partition import Partition, save_label_grid_rle

    cache_dir = resolve_dir(cache)
    out_dir = resolve_dir(out)
    run = _Run("label-atlas", {"cache": str(cache), "atlas": atlas_path}, out_dir)
    run.add_input(cache_dir / "manifest.json")
    run.add_input(atlas_path)

    log = _load_filtered_log(cache_dir)
    entries = parse_atlas(atlas_path)
    log_event(stage="atlas", entries=len(entries))
    canvas = canvas_at(log, int(log.time[-1]) if log.n_actions else 0)
    labeled = label_canvas(canvas, entries)
    labels = label_actions(log, labeled)
    log_event(stage="labeled", labels_used=labeled.n_labels_used())

    out_dir.mkdir(parents=True, exist_ok=True)
    save_label_grid_rle(labeled.entry_index, out_dir / "canvas_labels.rle")
    Partition(items=np.arange(log.n_actions), labels=labels).save_csv(
        out_dir / "action_labels.csv")

    records = coalition_records(log, labels, reference="final")
    areas = {i: int((labeled.entry_index == i).sum()) for i in range(len(entries))}
    lines = ["artwork_id,name,area,coalition_size"]
    for i, entry in enumerate(entries):
        rec = records.get(i)
        name = entry.name.replace(",", " ")
        lines.append(f"{entry.id},{name},{areas[i]},{rec.size if rec else 0}")
    _atomic_write_text(out_dir / "artworks.csv", "\n".join(lines) + "\n")
    for f in ("canvas_labels.rle", "action_labels.csv", "artworks.csv"):
        run.add_output(out_dir / f)
    run.finish()


def _segment_worker(t):
    log, embeddings, kappa, delta = _SEGMENT_STATE
    from .ingest import canvas_at
    from .seg import segment_snapshot

    canvas = canvas_at(log, t)
    part = segment_snapshot(canvas, log.player, embeddings, kappa, delta)
    return t, part.items, part.labels


_SEGMENT_STATE = None


@main.command()
@click.option("--cache", required=True)
@click.option("--out", required=True)
@click.option("--seed", required=True, type=int)
@click.option("--cadence", default=60, show_default=True, type=click.IntRange(min=1),
              help="Snapshot cadence in seconds.")
@click.option("--kappa", default=300.0, show_default=True,
              type=click.FloatRange(min=0, min_open=True))
@click.option("--delta", default=1.0, show_default=True, type=click.FloatRange(min=0))
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True),
              help="Reuse a previously trained embedding file.")
@click.option("--dim", default=64, show_default=True, type=click.IntRange(min=2))
@click.option("--walks", default=10, show_default=True)
@click.option("--walk-length", default=40, show_default=True)
@click.option("--window", default=5, show_default=True)
@click.option("--epochs", default=3, show_default=True)
@click.option("--negatives", default=5, show_default=True)
@click.option("--p", "p_return", default=1.0, show_default=True)
@click.option("--q", "q_inout", default=1.0, show_default=True)
@_data_errors
def segment(cache, out, seed, cadence, kappa, delta, workers, embeddings_path,
            dim, walks, walk_length, window, epochs, negatives, p_return, q_inout):
    """Segment every snapshot with the combined visual+player algorithm."""
    global _SEGMENT_STATE
    from .cover import default_snapshot_times
    from .embed import (EmbedParams, build_player_graph, embed_players,
                        load_embeddings, save_embeddings)
    from .partition import Partition

    cache_dir = resolve_dir(cache)
    out_dir = resolve_dir(out)
    params = {
        "cache": str(cache), "seed": seed, "cadence": cadence, "kappa": kappa,
        "delta": delta, "dim": dim, "walks": walks, "walk_length": walk_length,
        "window": window, "epochs": epochs, "negatives": negatives,
        "p": p_return, "q": q_inout,
    }
    run = _Run("segment", params, out_dir)
    run.add_input(cache_dir / "manifest.json")
    log = _load_filtered_log(cache_dir)

    if embeddings_path:
        matrix, header = load_embeddings(embeddings_path)
        run.add_input(embeddings_path)
        log_event(stage="embeddings-loaded", n=header["n"], h=header["h"])
    else:
        eparams = EmbedParams(h=dim, walk_length=walk_length, num_walks=walks,
                              window=window, p=p_return, q=q_inout,
                              negatives=negatives, epochs=epochs, seed=seed)
        t0 = time_mod.monotonic()
        graph = build_player_graph(log)
        log_event(stage="player-graph", nodes=graph.n_nodes, edges=graph.n_edges,
                  elapsed=round(time_mod.monotonic() - t0, 3))
        t0 = time_mod.monotonic()
        matrix = embed_players(graph, eparams)
        log_event(stage="embeddings", elapsed=round(time_mod.monotonic() - t0, 3))
        out_dir.mkdir(parents=True, exist_ok=True)
        save_embeddings(out_dir / "embeddings.bin", matrix, eparams)
        run.add_output(out_dir / "embeddings.bin")

    times = default_snapshot_times(log, cadence * MS_PER_SEC)
    part_dir = out_dir / "partitions"
    part_dir.mkdir(parents=True, exist_ok=True)
    _SEGMENT_STATE = (log, matrix, kappa, delta)
    t0 = time_mod.monotonic()
    if workers > 1:
        import multiprocessing

        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers) as pool:
            results = pool.map(_segment_worker, times, chunksize=1)
    else:
        results = [_segment_worker(t) for t in times]
    _SEGMENT_STATE = None
    log_event(stage="segmented", snapshots=len(times),
              elapsed=round(time_mod.monotonic() - t0, 3))

    index = []
    for t, items, labels in results:
        fname = f"snapshot_{t}.csv"
        Partition(items=items, labels=labels).save_csv(part_dir / fname)
        index.append({"time_ms": int(t), "file": fname})
    _atomic_write_text(out_dir / "snapshots.json",
                       json.dumps(index, indent=2) + "\n")
    run.add_output(part_dir)
    run.add_output(out_dir / "snapshots.json")
    run.finish()


@main.command()
@click.option("--cache", required=True)
@click.option("--partitions", "partitions_dir", required=True)
@click.option("--embeddings", "embeddings_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True)
@click.option("--bands", default="auto", show_default=True,
              help="Comma-separated descending gain bounds ending at 1, or 'auto'.")
@click.option("--alpha-iou", default=0.6, show_default=True,
              type=click.FloatRange(0, 1))
@click.option("--alpha-as", default=0.5, show_default=True,
              type=click.FloatRange(0, 1))
@click.option("--alpha-player", default=0.8, show_default=True,
              type=click.FloatRange(-1, 1))
@_data_errors
def dyncluster(cache, partitions_dir, embeddings_path, out, bands,
               alpha_iou, alpha_as, alpha_player):
    """Combine snapshot partitions into dynamic clusters via set cover."""
    from .cover import (assign_actions, banded_fgreedy, build_cover_instance,
                        merge_covers)
    from .embed import load_embeddings
    from .partition import Partition

    cache_dir = resolve_dir(cache)
    part_root = resolve_dir(partitions_dir)
    out_dir = resolve_dir(out)
    params = {"cache": str(cache), "partitions": str(partitions_dir),
              "bands": bands, "alpha_iou": alpha_iou, "alpha_as": alpha_as,
              "alpha_player": alpha_player}
    run = _Run("dyncluster", params, out_dir)
    run.add_input(cache_dir / "manifest.json")
    run.add_input(embeddings_path)

    log = _load_filtered_log(cache_dir)
    matrix, _ = load_embeddings(embeddings_path)
    index_file = part_root / "snapshots.json"
    if not index_file.exists():
        index_file = part_root.parent / "snapshots.json"
    if not index_file.exists():
        raise DataError(f"no snapshots.json next to {part_root}")
    index = json.loads(index_file.read_text())
    parts = []
    base = part_root if (part_root / index[0]["file"]).exists() else part_root / "partitions"
    for rec in index:
        parts.append((int(rec["time_ms"]), Partition.load_csv(base / rec["file"])))
    log_event(stage="cover-instance", snapshots=len(parts))
    instance = build_cover_instance(parts, log)
    log_event(stage="cover-built", sets=instance.n_sets,
              memberships=int(instance.sizes().sum()),
              fallback=instance.fallback_count)

    band_list = None if bands == "auto" else [int(b) for b in bands.split(",")]
    stats: dict = {}
    t0 = time_mod.monotonic()
    selected = banded_fgreedy(instance, band_list, stats=stats)
    log_event(stage="set-cover", selected=len(selected),
              elapsed=round(time_mod.monotonic() - t0, 3), **stats)
    clustering = assign_actions(instance, selected)
    t0 = time_mod.monotonic()
    clustering = merge_covers(clustering, instance, log, matrix,
                              alpha_iou=alpha_iou, alpha_as=alpha_as,
                              alpha_player=alpha_player)
    log_event(stage="merged", clusters=clustering.n_clusters,
              elapsed=round(time_mod.monotonic() - t0, 3))

    out_dir.mkdir(parents=True, exist_ok=True)
    clustering.to_partition().save_csv(out_dir / "clusters.csv")
    lineage_lines = ["rule,a,b,value"]
    for ev in clustering.lineage:
        if ev["rule"] == "iou_as":
            lineage_lines.append(
                f"iou_as,{ev['cover_a']},{ev['cover_b']},{ev['iou']}")
        else:
            lineage_lines.append(
                f"embedding,{ev['group_a']},{ev['group_b']},{ev['cosine']}")
    _atomic_write_text(out_dir / "lineage.csv", "\n".join(lineage_lines) + "\n")
    run.extra["cover_stats"] = stats
    run.add_output(out_dir / "clusters.csv")
    run.add_output(out_dir / "lineage.csv")
    run.finish()


@main.command()
@click.option("--cache", required=True)
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True)
@click.option("--reference", default="final", show_default=True,
              type=click.Choice(["final", "modal"]))
@click.option("--snapshot-hours", default="24,48,72", show_default=True)
@click.option("--timeline-cluster", "timeline_clusters", multiple=True, type=int)
@click.option("--loafing-bins", default="1,100,10000", show_default=True)
@click.option("--full-duration-rates", is_flag=True,
              help="Use the full experiment span as the actions/hour denominator.")
@click.option("--plots", is_flag=True, help="Also emit SVG plots.")
@_data_errors
def metrics(cache, labels_path, out, reference, snapshot_hours, timeline_clusters,
            loafing_bins, full_duration_rates, plots):
    """Compute the engagement/collaboration/competition metric tables."""
    from . import metrics as M

    cache_dir = resolve_dir(cache)
    out_dir = resolve_dir(out)
    run = _Run("metrics", {
        "cache": str(cache), "labels": labels_path, "reference": reference,
        "snapshot_hours": snapshot_hours, "loafing_bins": loafing_bins,
        "full_duration_rates": full_duration_rates,
    }, out_dir)
    run.add_input(cache_dir / "manifest.json")
    run.add_input(labels_path)
    log = _load_filtered_log(cache_dir)
    labels = _load_labels(Path(labels_path), log.n_actions)
    out_dir.mkdir(parents=True, exist_ok=True)

    icdf = M.activity_icdf(log, full_duration=full_duration_rates)
    _atomic_write_text(out_dir / "activity_icdf.csv", "actions_per_hour,frac_players\n"
                       + "".join(f"{x:.9g},{f:.9g}\n" for x, f in icdf))

    prog = M.classify_actions(log)
    lines = ["hour,final,match,adversary,pct_of_total,cumulative_pct"]
    for row in prog.rows():
        lines.append(f"{row['hour']},{row['final']},{row['match']},"
                     f"{row['adversary']},{row['pct_of_total']:.6f},"
                     f"{row['cumulative_pct']:.6f}")
    _atomic_write_text(out_dir / "progression.csv", "\n".join(lines) + "\n")

    records = M.coalition_records(log, labels, reference=reference)
    rows, slope, skipped = M.coordination_cost(records)
    lines = ["label,size,agreeing,wasted,ratio"]
    for r in rows:
        lines.append(f"{r['label']},{r['size']},{r['agreeing']},{r['wasted']},"
                     f"{r['ratio']:.9g}")
    _atomic_write_text(out_dir / "coordination_cost.csv", "\n".join(lines) + "\n")
    log_event(stage="coordination-cost", coalitions=len(rows),
              slope=slope, skipped_zero_agreeing=skipped)

    bins = tuple(int(b) for b in loafing_bins.split(","))
    loaf, empty_bins = M.loafing_icdf(records, bins)
    lines = ["size_bin,median_actions,frac_coalitions"]
    for bin_name, points in loaf.items():
        for v, f in points:
            lines.append(f"{bin_name},{v:.9g},{f:.9g}")
    _atomic_write_text(out_dir / "loafing_icdf.csv", "\n".join(lines) + "\n")
    if empty_bins:
        log_event(stage="loafing", empty_bins=empty_bins)

    for hours in (int(h) for h in snapshot_hours.split(",") if h):
        t = hours * MS_PER_HOUR
        if t > log.config.duration:
            log_event(stage="coalition-sizes", skipped_hour=hours,
                      reason="beyond duration")
            continue
        dist = M.coalition_size_distribution(log, labels, t)
        lines = ["label,normalized_size"]
        for lab, v in sorted(dist.items()):
            lines.append(f"{lab},{v:.9g}")
        _atomic_write_text(out_dir / f"coalition_sizes_{hours}h.csv",
                           "\n".join(lines) + "\n")

    for cid in timeline_clusters:
        tl = M.conflict_timeline(log, labels, cid)
        lines = ["hour,collaborative,adversarial"]
        for i, h in enumerate(tl["hours"].tolist()):
            lines.append(f"{h},{tl['collaborative'][i]},{tl['adversarial'][i]}")
        _atomic_write_text(out_dir / f"conflict_timeline_{cid}.csv",
                           "\n".join(lines) + "\n")

    avp_rows, avp_slope = M.actions_vs_pixels(records)
    lines = ["label,actions,pixels"]
    for r in avp_rows:
        lines.append(f"{r['label']},{r['actions']},{r['pixels']}")
    _atomic_write_text(out_dir / "actions_vs_pixels.csv", "\n".join(lines) + "\n")
    log_event(stage="actions-vs-pixels", slope=avp_slope)

    grid = M.activity_heatmap(log)
    _atomic_write_text(out_dir / "heatmap.csv",
                       "\n".join(",".join(str(v) for v in row) for row in grid.tolist())
                       + "\n")

    if plots:
        _emit_plots(out_dir, icdf, prog, rows, loaf)

    for f in sorted(out_dir.glob("*.csv")):
        run.add_output(f)
    run.finish()


def _emit_plots(out_dir, icdf, prog, cost_rows, loaf):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if icdf:
        fig, ax = plt.subplots(figsize=(5, 4))
        xs, fs = zip(*icdf)
        ax.loglog(xs, fs)
        ax.set_xlabel("actions/hour")
        ax.set_ylabel("fraction of players >= x")
        fig.savefig(out_dir / "activity_icdf.svg", format="svg")
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("final", "match", "adversary"):
        ax.plot(prog.hours, getattr(prog, name), label=name)
    ax.set_xlabel("hour")
    ax.set_ylabel("actions")
    ax.legend()
    fig.savefig(out_dir / "progression.svg", format="svg")
    plt.close(fig)

    if cost_rows:
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter([r["size"] for r in cost_rows], [r["ratio"] for r in cost_rows], s=8)
        ax.set_xlabel("coalition size")
        ax.set_ylabel("wasted / agreeing")
        fig.savefig(out_dir / "coordination_cost.svg", format="svg")
        plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, points in loaf.items():
        if points:
            xs, fs = zip(*points)
            ax.semilogx(xs, fs, label=name, drawstyle="steps-post")
    ax.set_xlabel("median actions per member")
    ax.set_ylabel("fraction of coalitions >= x")
    ax.legend()
    fig.savefig(out_dir / "loafing_icdf.svg", format="svg")
    plt.close(fig)


@main.command()
@click.option("--cache", required=True)
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True)
@click.option("--seed", required=True, type=int)
@click.option("--snapshots", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--a-min", default=20, show_default=True, type=click.IntRange(min=1))
@click.option("--depth", default=6, show_default=True, type=click.IntRange(min=1))
@click.option("--min-leaf", default=20, show_default=True, type=click.IntRange(min=1))
@click.option("--slice-hours", default=48, show_default=True,
              help="Boundary for the early/late evaluation slices.")
@_data_errors
def predict(cache, labels_path, out, seed, snapshots, a_min, depth, min_leaf,
            slice_hours):
    """Extract success examples, train the decision tree, evaluate."""
    from .predict import (evaluate, examples_to_csv, extract_examples,
                          split_examples, train_tree)

    cache_dir = resolve_dir(cache)
    out_dir = resolve_dir(out)
    run = _Run("predict", {
        "cache": str(cache), "labels": labels_path, "seed": seed,
        "snapshots": snapshots, "a_min": a_min, "depth": depth,
        "min_leaf": min_leaf, "slice_hours": slice_hours,
    }, out_dir)
    run.add_input(cache_dir / "manifest.json")
    run.add_input(labels_path)
    log = _load_filtered_log(cache_dir)
    labels = _load_labels(Path(labels_path), log.n_actions)

    examples, empty = extract_examples(log, labels, n_snapshots=snapshots,
                                       seed=seed, a_min=a_min)
    log_event(stage="examples", n=len(examples), empty_snapshots=len(empty))
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "examples.csv", examples_to_csv(examples))

    train, test = split_examples(examples, seed=seed)
    model = train_tree(train, depth=depth, min_leaf=min_leaf, seed=seed)
    _atomic_write_text(out_dir / "model.txt", model.dump())

    cut = slice_hours * MS_PER_HOUR
    end = log.config.duration + 1
    lines = ["slice,n,f1,pr_auc,positive_fraction"]
    for name, sl in (("all", None), (f"0-{slice_hours}h", (0, cut)),
                     (f"{slice_hours}h-end", (cut, end))):
        try:
            res = evaluate(model, test, time_slice=sl)
        except ValueError as exc:
            log_event(stage="evaluate", slice=name, skipped=str(exc))
            continue
        lines.append(f"{name},{res['n']},{res['f1']:.6f},{res['pr_auc']:.6f},"
                     f"{res['positive_fraction']:.6f}")
        log_event(stage="evaluate", slice=name, **{k: round(v, 6) if isinstance(v, float)
                                                   else v for k, v in res.items()})
    _atomic_write_text(out_dir / "evaluation.csv", "\n".join(lines) + "\n")
    for f in ("examples.csv", "model.txt", "evaluation.csv"):
        run.add_output(out_dir / f)
    run.finish()


@main.group()
def stats():
    """Timeseries statistics (Granger test, anomaly detection)."""


@stats.command()
@click.option("--x", "x_path", required=True, type=click.Path(exists=True),
              help="Candidate cause series CSV (bucket start, count).")
@click.option("--y", "y_path", required=True, type=click.Path(exists=True),
              help="Effect series CSV (bucket start, count).")
@click.option("--max-lag", default=24, show_default=True, type=click.IntRange(min=1))
@click.option("--difference", is_flag=True, help="First-difference both series.")
@click.option("--out", required=True)
@_data_errors
def granger(x_path, y_path, max_lag, difference, out):
    """F-test of whether lags of x help predict y."""
    from .stats import TimeSeries, granger_test

    out_dir = resolve_dir(out)
    run = _Run("granger", {"x": x_path, "y": y_path, "max_lag": max_lag,
                           "difference": difference}, out_dir)
    run.add_input(x_path)
    run.add_input(y_path)
    res = granger_test(TimeSeries.load_csv(x_path), TimeSeries.load_csv(y_path),
                       max_lag=max_lag, difference=difference)
    text = ("p_value,f_stat,chosen_lag,df_num,df_denom\n"
            f"{res['p_value']:.9g},{res['f_stat']:.9g},{res['chosen_lag']},"
            f"{res['df_num']},{res['df_denom']}\n")
    click.echo(text, nl=False)
    _atomic_write_text(out_dir / "granger.csv", text)
    run.add_output(out_dir / "granger.csv")
    run.finish()


@stats.command()
@click.option("--series", "series_path", required=True, type=click.Path(exists=True))
@click.option("--window", default=24, show_default=True, type=click.IntRange(min=5))
@click.option("--threshold", default=3.5, show_default=True,
              type=click.FloatRange(min=0, min_open=True))
@click.option("--out", required=True)
@_data_errors
def anomaly(series_path, window, threshold, out):
    """Rolling median/MAD anomaly detection."""
    from .stats import TimeSeries, detect_anomalies

    out_dir = resolve_dir(out)
    run = _Run("anomaly", {"series": series_path, "window": window,
                           "threshold": threshold}, out_dir)
    run.add_input(series_path)
    ts = TimeSeries.load_csv(series_path)
    idx = detect_anomalies(ts, window=window, threshold=threshold)
    lines = ["index,bucket_start,value"]
    for i in idx.tolist():
        lines.append(f"{i},{ts.start + i * ts.step},{ts.values[i]:.9g}")
    text = "\n".join(lines) + "\n"
    click.echo(text, nl=False)
    _atomic_write_text(out_dir / "anomalies.csv", text)
    run.add_output(out_dir / "anomalies.csv")
    run.finish()


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True))
@click.option("--vi-base", default="e", show_default=True,
              type=click.Choice(["e", "2"]))
@click.option("--out", required=True)
@_data_errors
def eval_cmd(pred_path, truth_path, vi_base, out):
    """ARS and VI between predicted and truth partitions (CSV item_id,cluster)."""
    import math

    from .partition import Partition
    from .stats import ars, vi

    out_dir = resolve_dir(out)
    run = _Run("eval", {"pred": pred_path, "truth": truth_path,
                        "vi_base": vi_base}, out_dir)
    run.add_input(pred_path)
    run.add_input(truth_path)
    pred = Partition.load_csv(pred_path)
    truth = Partition.load_csv(truth_path)
    base = math.e if vi_base == "e" else 2.0
    a = ars(pred, truth)
    v = vi(pred, truth, base=base)
    text = f"ars,vi\n{a:.9g},{v:.9g}\n"
    click.echo(text, nl=False)
    _atomic_write_text(out_dir / "eval.csv", text)
    run.add_output(out_dir / "eval.csv")
    run.finish()


if __name__ == "__main__":
    main()
