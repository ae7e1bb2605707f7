"""Command-line entry point and experiment harness.

Input is either a CSV (header ``f0..f{d-1}`` plus an optional trailing
``label`` column, empty cell = unlabeled) or the built-in synthetic
generator. A fully labeled dataset runs the evaluation protocol: draw a
stratified labeled pool per repetition, expose labels for the M largest
classes for each M in the schedule, run every requested variant, and score
mean F1 on the points whose labels were hidden. A partially labeled
dataset runs inference directly on the given labeled/unlabeled division
(no truth, so no F1).

Outputs under --out: manifest.json (echo of every setting plus the label
mapping and normalization parameters), metrics.json, plot_data.csv, one
assignments.csv per grid cell under runs/, and timings.json. All files
except timings.json are byte-deterministic for a fixed manifest; wall
clock lives only in the sidecar.

Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import AI2GMM, I2GMM, IGMM, NELConfig, RunResult, run_nel
from .evaldata import (
    SplitSchedule,
    SynthConfig,
    build_confusion,
    generate_synthetic,
    make_split,
    mean_f1,
    normalize_zscore,
)

MODEL_CHOICES = (IGMM, I2GMM, AI2GMM)
_VARIANT_TAG = {IGMM: 0, I2GMM: 1, AI2GMM: 2}
_SPLIT_TAG = 1
_RUN_TAG = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# ingestion


def ingest_csv(path) -> tuple[np.ndarray, list]:
    """Parse a dataset file strictly.

    Returns the feature matrix and one raw label per row (None when the
    cell is empty or the column absent). Any structural or numeric problem
    aborts with the 1-based data row and column name.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        header = [h.strip() for h in header]
        has_label = bool(header) and header[-1] == "label"
        feat_names = header[:-1] if has_label else header
        if not feat_names:
            raise DataError(f"{path}: no feature columns")
        for j, name in enumerate(feat_names):
            if name != f"f{j}":
                raise DataError(
                    f"{path}: header column {j + 1} is {name!r}, expected 'f{j}'"
                    " (features must be named f0..f{d-1}, optional trailing 'label')"
                )
        d = len(feat_names)
        rows = []
        labels = []
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            vals = np.empty(d)
            for j in range(d):
                cell = row[j].strip()
                try:
                    vals[j] = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {i}, column f{j}: not a number: {cell!r}") from None
                if not math.isfinite(vals[j]):
                    raise DataError(f"{path}: row {i}, column f{j}: non-finite value {cell!r}")
            rows.append(vals)
            if has_label:
                cell = row[d].strip()
                labels.append(cell if cell else None)
            else:
                labels.append(None)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.vstack(rows), labels


def map_labels(raw: list) -> tuple[np.ndarray, dict]:
    """Map raw string labels to dense ids ordered by class size descending
    (ties alphabetically), which makes id order match the observed-class
    schedule. None stays -1."""
    counts: dict[str, int] = {}
    for r in raw:
        if r is not None:
            counts[r] = counts.get(r, 0) + 1
    order = sorted(counts, key=lambda s: (-counts[s], s))
    mapping = {name: i for i, name in enumerate(order)}
    out = np.array([-1 if r is None else mapping[r] for r in raw], dtype=np.int64)
    return out, mapping


# ---------------------------------------------------------------------------
# manifest and report types


@dataclass
class RunManifest:
    dataset: str
    out_dir: str
    variants: list
    sweeps: int = 1000
    preinference_sweeps: int = 100
    outlier_fraction: float = 0.20
    burn_in: int | None = None
    seed: int = 0
    repetitions: int = 5
    labeled_fraction: float = 0.20
    observed_counts: list | None = None
    normalize: bool = True
    synthetic: dict | None = None
    jobs: int = 1

    def __post_init__(self):
        bad = [v for v in self.variants if v not in MODEL_CHOICES]
        if bad:
            raise ValueError(f"unknown variants: {bad}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class CellMetrics:
    variant: str
    n_observed: int
    repetition: int
    mean_f1: float | None
    per_class_f1: list | None
    n_classes: int
    n_components: int
    outcomes: dict
    wall_seconds: float = field(compare=False, default=0.0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("wall_seconds")
        return d


@dataclass
class AggregateMetrics:
    variant: str
    n_observed: int
    mean_f1: float | None
    n_repetitions: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class MetricsReport:
    cells: list
    aggregates: list

    def to_dict(self) -> dict:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "aggregates": [a.to_dict() for a in self.aggregates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            cells=[CellMetrics(**c) for c in d["cells"]],
            aggregates=[AggregateMetrics(**a) for a in d["aggregates"]],
        )


def aggregate_cells(cells: list) -> list:
    """Arithmetic mean of the repetition F1 values per (variant, count)."""
    groups: dict[tuple, list] = {}
    order = []
    for c in cells:
        key = (c.variant, c.n_observed)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(c.mean_f1)
    out = []
    for key in order:
        vals = groups[key]
        agg = None
        if all(v is not None for v in vals):
            agg = float(sum(vals) / len(vals))
        out.append(
            AggregateMetrics(variant=key[0], n_observed=key[1], mean_f1=agg, n_repetitions=len(vals))
        )
    return out


# ---------------------------------------------------------------------------
# output writers


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_assignments_csv(result: RunResult, path: Path) -> None:
    lines = ["point_index,class_id,component_id,outcome_kind"]
    for i in range(result.class_of.shape[0]):
        lines.append(f"{i},{int(result.class_of[i])},{int(result.comp_of[i])},{result.outcome[i]}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_outputs(out_dir, manifest: RunManifest, report: MetricsReport, timings: dict, extra=None) -> None:
    """Write the aggregated artifacts: metrics.json, plot_data.csv, the
    manifest echo, and the wall-clock sidecar. Per-cell assignment files
    are written as each cell completes, not here."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = manifest.to_dict()
    if extra:
        echo.update(extra)
    _atomic_write_text(out / "manifest.json", _json_text(echo))
    _atomic_write_text(out / "metrics.json", _json_text(report.to_dict()))
    lines = ["observed_count,variant,repetition,mean_f1"]
    for c in report.cells:
        f1 = "" if c.mean_f1 is None else repr(c.mean_f1)
        lines.append(f"{c.n_observed},{c.variant},{c.repetition},{f1}")
    _atomic_write_text(out / "plot_data.csv", "\n".join(lines) + "\n")
    _atomic_write_text(out / "timings.json", _json_text(timings))


# ---------------------------------------------------------------------------
# the grid


def _derive_seed(*entropy) -> int:
    words = np.random.SeedSequence(list(entropy)).generate_state(2)
    return int(words[0]) << 32 | int(words[1])


def _cell_key(variant: str, n_observed: int, rep: int) -> str:
    return f"{variant}_M{n_observed:02d}_r{rep}"


def _run_cell(args: dict) -> dict:
    """One grid cell, picklable for the process pool. Returns the metrics
    row plus everything the writer needs."""
    config = NELConfig(
        variant=args["variant"],
        sweeps=args["sweeps"],
        preinference_sweeps=args["preinference_sweeps"],
        outlier_fraction=args["outlier_fraction"],
        burn_in=args["burn_in"],
        seed=args["seed"],
    )
    result = run_nel(args["X"], args["labels"], config)
    f1 = None
    per_class = None
    if args["truth"] is not None:
        mask = args["eval_mask"]
        cm = build_confusion(args["truth"][mask], result.class_of[mask], args["observed_truth"])
        f1_val, per = mean_f1(cm)
        f1 = float(f1_val)
        per_class = [float(v) for v in per]
    kinds = ["standard", "component_discovery", "new_class"]
    outcomes = {k: int(np.sum(result.outcome == k)) for k in kinds}
    out_dir = Path(args["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    write_assignments_csv(result, out_dir / "assignments.csv")
    return {
        "metrics": CellMetrics(
            variant=args["variant"],
            n_observed=args["n_observed"],
            repetition=args["rep"],
            mean_f1=f1,
            per_class_f1=per_class,
            n_classes=result.n_classes,
            n_components=result.n_components,
            outcomes=outcomes,
            wall_seconds=result.wall_seconds,
        ),
        "key": args["key"],
        "wall": result.wall_seconds,
    }


def run_experiment(manifest: RunManifest) -> tuple[MetricsReport, int]:
    """Execute the full grid described by the manifest and write every
    artifact. Returns the report and the number of failed cells; partial
    results stay on disk with a FAILED marker per broken cell."""
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra: dict = {}

    if manifest.synthetic is not None:
        synth = SynthConfig(**manifest.synthetic)
        data = generate_synthetic(synth)
        X, truth = data.X, data.class_of
        extra["label_mapping"] = {str(k): int(k) for k in range(synth.n_classes)}
    else:
        X, raw = ingest_csv(manifest.dataset)
        mapped, mapping = map_labels(raw)
        extra["label_mapping"] = mapping
        truth = mapped if (mapped >= 0).all() and mapping else None
        given_labels = mapped

    if manifest.normalize:
        X, mean, std = normalize_zscore(X)
        extra["normalization"] = {"mean": mean.tolist(), "std": std.tolist()}

    cells_args = []
    if truth is not None:
        schedule = SplitSchedule(
            labeled_fraction=manifest.labeled_fraction,
            observed_counts=manifest.observed_counts,
        )
        for rep in range(manifest.repetitions):
            plan = make_split(truth, schedule, _derive_seed(manifest.seed, _SPLIT_TAG, rep))
            for case in plan.cases:
                for variant in manifest.variants:
                    cells_args.append(
                        {
                            "X": X,
                            "labels": case.labels,
                            "truth": truth,
                            "eval_mask": case.eval_mask,
                            "observed_truth": case.observed_truth,
                            "variant": variant,
                            "n_observed": case.n_observed,
                            "rep": rep,
                            "sweeps": manifest.sweeps,
                            "preinference_sweeps": manifest.preinference_sweeps,
                            "outlier_fraction": manifest.outlier_fraction,
                            "burn_in": manifest.burn_in,
                            "seed": _derive_seed(
                                manifest.seed,
                                _RUN_TAG,
                                rep,
                                case.n_observed,
                                _VARIANT_TAG[variant],
                            ),
                            "key": _cell_key(variant, case.n_observed, rep),
                            "out_dir": str(out / "runs" / _cell_key(variant, case.n_observed, rep)),
                        }
                    )
    else:
        n_observed = int(given_labels.max()) + 1 if (given_labels >= 0).any() else 0
        for rep in range(manifest.repetitions):
            for variant in manifest.variants:
                cells_args.append(
                    {
                        "X": X,
                        "labels": given_labels,
                        "truth": None,
                        "eval_mask": None,
                        "observed_truth": None,
                        "variant": variant,
                        "n_observed": n_observed,
                        "rep": rep,
                        "sweeps": manifest.sweeps,
                        "preinference_sweeps": manifest.preinference_sweeps,
                        "outlier_fraction": manifest.outlier_fraction,
                        "burn_in": manifest.burn_in,
                        "seed": _derive_seed(
                            manifest.seed, _RUN_TAG, rep, n_observed, _VARIANT_TAG[variant]
                        ),
                        "key": _cell_key(variant, n_observed, rep),
                        "out_dir": str(out / "runs" / _cell_key(variant, n_observed, rep)),
                    }
                )

    results: dict[str, dict] = {}
    failures = 0

    def _handle_failure(args, exc_text):
        nonlocal failures
        failures += 1
        cell_dir = Path(args["out_dir"])
        cell_dir.mkdir(parents=True, exist_ok=True)
        _atomic_write_text(cell_dir / "FAILED.txt", exc_text)
        print(f"cell {args['key']}: FAILED", file=sys.stderr)

    if manifest.jobs == 1:
        for args in cells_args:
            try:
                results[args["key"]] = _run_cell(args)
            except Exception:
                _handle_failure(args, traceback.format_exc())
    else:
        with ProcessPoolExecutor(max_workers=manifest.jobs) as pool:
            futures = {pool.submit(_run_cell, args): args for args in cells_args}
            for fut, args in futures.items():
                try:
                    results[args["key"]] = fut.result()
                except Exception:
                    _handle_failure(args, traceback.format_exc())

    cells = [results[a["key"]]["metrics"] for a in cells_args if a["key"] in results]
    report = MetricsReport(cells=cells, aggregates=aggregate_cells(cells))
    timings = {
        "cells": {a["key"]: results[a["key"]]["wall"] for a in cells_args if a["key"] in results}
    }
    write_outputs(manifest.out_dir, manifest, report, timings, extra=extra)
    return report, failures


# ---------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_synth_overrides(pairs: list) -> dict:
    out: dict = {}
    int_fields = {"n_classes", "n_components", "n_points", "d", "seed", "max_tries"}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"--synthetic overrides must be key=value, got {pair!r}")
        key, _, val = pair.partition("=")
        if key in int_fields:
            out[key] = int(val)
        else:
            out[key] = float(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nelmix", description="Mixture-based classification with novel-class discovery")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="input CSV (header f0..f{d-1}, optional trailing 'label')")
    src.add_argument(
        "--synthetic",
        nargs="*",
        metavar="KEY=VALUE",
        help="use the built-in generator, optionally overriding its settings",
    )
    p.add_argument("--model", default="all", choices=list(MODEL_CHOICES) + ["all"])
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--preinference-sweeps", type=int, default=100)
    p.add_argument("--outlier-frac", type=float, default=0.20)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument(
        "--observed-schedule",
        default="auto",
        help="comma-separated observed-class counts, or 'auto' for 0,2,4,.. capped at K",
    )
    p.add_argument("--labeled-frac", type=float, default=0.20)
    p.add_argument("--normalize", choices=["on", "off"], default="on")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    return p


def manifest_from_args(args) -> RunManifest:
    if args.data is None and args.synthetic is None:
        raise UsageError("one of --data or --synthetic is required")
    variants = list(MODEL_CHOICES) if args.model == "all" else [args.model]
    observed = None
    if args.observed_schedule != "auto":
        try:
            observed = [int(tok) for tok in args.observed_schedule.split(",") if tok.strip()]
        except ValueError:
            raise UsageError(f"bad --observed-schedule: {args.observed_schedule!r}") from None
        if not observed:
            raise UsageError("--observed-schedule must name at least one count")
    synth = None
    if args.synthetic is not None:
        synth = _parse_synth_overrides(args.synthetic)
    return RunManifest(
        dataset=args.data or "synthetic",
        out_dir=args.out,
        variants=variants,
        sweeps=args.sweeps,
        preinference_sweeps=args.preinference_sweeps,
        outlier_fraction=args.outlier_frac,
        burn_in=args.burn_in,
        seed=args.seed,
        repetitions=args.repeats,
        labeled_fraction=args.labeled_frac,
        observed_counts=observed,
        normalize=args.normalize == "on",
        synthetic=synth,
        jobs=args.jobs,
    )


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        manifest = manifest_from_args(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        report, failures = run_experiment(manifest)
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    for agg in report.aggregates:
        f1 = "n/a" if agg.mean_f1 is None else f"{agg.mean_f1:.4f}"
        print(f"{agg.variant:8s} observed={agg.n_observed:3d} mean_f1={f1} ({agg.n_repetitions} reps)")
    if failures:
        print(f"{failures} cell(s) failed; see FAILED.txt markers", file=sys.stderr)
        return 3
    return 0


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
