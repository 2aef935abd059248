"""Run directories, seed sweeps, aggregate reports and the self-check entry points.

A run directory holds::

    metrics.csv        one row per evaluation
    samples/           generator samples at every evaluation (CSV or PGM)
    models.bin         final parameters, little-endian float64
    models.json        layout of models.bin
    manifest.json      resolved config, seed, version, timestamps, inventory

metrics.csv contains no timestamps, so identical (config, seed) pairs produce
identical bytes.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from . import __version__
from . import data as ds
from . import divergence as dv
from . import transforms as tf
from .config import DagConfig, parse_config
from .models import export_params
from .trainer import TrainReport, train

METRIC_COLUMNS = ("iteration", "d_loss", "g_loss", "frechet", "modes_covered", "mode_kl", "leakage")
SUMMARY_COLUMNS = ("mode", "runs", "aborted", "frechet", "modes_covered", "mode_kl", "leakage", "d_loss", "g_loss")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_NAN = 4


class RunExists(FileExistsError):
    pass


@dataclass
class RunManifest:
    config: dict
    seed: int
    version: str
    started: str
    finished: str
    status: str  # "ok" or "nan_abort"
    files: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    abort_reason: str | None = None

    @property
    def aborted(self) -> bool:
        return self.status != "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def metrics_csv(report: TrainReport) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRIC_COLUMNS) + "\n")
    for row in report.rows:
        buf.write(",".join(_fmt(getattr(row, c)) for c in METRIC_COLUMNS) + "\n")
    return buf.getvalue()


def _write_samples(folder: Path, report: TrainReport) -> list[Path]:
    folder.mkdir(exist_ok=True)
    written = []
    grid = report.models.dataset.grid_shape if report.models else None
    for row in report.rows:
        if row.samples is None:
            continue
        if grid is None:
            path = folder / f"iter_{row.iteration:06d}.csv"
            ds.write_points_csv(path, row.samples)
        else:
            path = folder / f"iter_{row.iteration:06d}.pgm"
            ds.write_pgm_mosaic(path, row.samples, grid)
        written.append(path)
    return written


def _write_models(out: Path, report: TrainReport) -> list[Path]:
    m = report.models
    named = {"generator": m.generator.params}
    for k in range(m.discriminator.K):
        named[f"discriminator.branch{k}"] = m.discriminator.branch_params(k)
    blob, entries = export_params(named)
    (out / "models.bin").write_bytes(blob)
    layout = {
        "dtype": "<f8",
        "transforms": [str(t) for t in m.transforms],
        "sharing": m.discriminator.sharing.value,
        "entries": entries,
    }
    (out / "models.json").write_text(json.dumps(layout, indent=2) + "\n")
    return [out / "models.bin", out / "models.json"]


def _inventory(out: Path, paths: list[Path]) -> list[dict]:
    items = []
    for p in sorted(paths):
        raw = p.read_bytes()
        items.append({"path": p.relative_to(out).as_posix(), "bytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
    return items


def run_experiment(config: DagConfig, out_dir: str | Path, seed: int | None = None, overwrite: bool = True) -> RunManifest:
    """Train once and write the full run directory; a NaN abort is recorded, not raised."""
    out = Path(out_dir)
    if seed is not None and seed != config.seed:
        config = config.replace(seed=seed)
    if not overwrite and (out / "manifest.json").exists():
        raise RunExists(f"{out} already holds a run")
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    report = train(config, keep_samples=config.dump_samples)
    files = [out / "metrics.csv"]
    (out / "metrics.csv").write_text(metrics_csv(report), newline="\n")
    if config.dump_samples:
        files += _write_samples(out / "samples", report)
    files += _write_models(out, report)
    manifest = RunManifest(
        config=config.to_dict(),
        seed=config.seed,
        version=__version__,
        started=started,
        finished=_now(),
        status="nan_abort" if report.aborted else "ok",
        notes=list(report.notes),
        abort_reason=report.aborted,
    )
    manifest.files = _inventory(out, files) + [{"path": "manifest.json"}]
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


# ----------------------------------------------------------------------------
# sweeps and reports


def run_dir(out_dir: str | Path, mode: str, seed: int) -> Path:
    return Path(out_dir) / mode / f"seed_{seed}"


def _sweep_job(args) -> tuple[str, int, str]:
    doc, path = args
    cfg = parse_config(doc)
    try:
        m = run_experiment(cfg, path, overwrite=False)
    except RunExists:
        return cfg.mode, cfg.seed, "exists"
    return cfg.mode, cfg.seed, m.status


def sweep(config: DagConfig, seeds: list[int], modes: list[str], out_dir: str | Path, jobs: int = 1) -> list[tuple[str, int, str]]:
    """Every (mode, seed) pair in its own directory; existing runs are left untouched."""
    tasks = []
    for mode in modes:
        for s in seeds:
            cfg = config.replace(mode=mode, seed=s)
            tasks.append((cfg.to_dict(), str(run_dir(out_dir, mode, s))))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, tasks))
    return [_sweep_job(t) for t in tasks]


def read_metrics(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return [{k: float(v) for k, v in row.items()} for row in reader]


def collect_runs(runs_dir: str | Path) -> list[tuple[RunManifest, dict[str, float]]]:
    """(manifest, final metrics row) for every run under runs_dir, in path order."""
    out = []
    for manifest_path in sorted(Path(runs_dir).rglob("manifest.json")):
        manifest = RunManifest.load(manifest_path)
        rows = read_metrics(manifest_path.parent / "metrics.csv")
        out.append((manifest, rows[-1] if rows else {}))
    return out


def summarize(runs: list[tuple[RunManifest, dict[str, float]]]) -> list[dict]:
    by_mode: dict[str, list] = {}
    for manifest, final in runs:
        by_mode.setdefault(manifest.config["mode"], []).append((manifest, final))
    table = []
    for mode in sorted(by_mode):
        group = by_mode[mode]
        finished = [f for m, f in group if not m.aborted and f]
        row = {"mode": mode, "runs": len(group), "aborted": len(group) - len(finished)}
        for col in SUMMARY_COLUMNS[3:]:
            row[col] = statistics.median(f[col] for f in finished) if finished else math.nan
        table.append(row)
    return table


def write_report(runs_dir: str | Path, out_file: str | Path | None = None) -> tuple[Path, list[dict]]:
    runs = collect_runs(runs_dir)
    if not runs:
        raise FileNotFoundError(f"no runs found under {runs_dir}")
    table = summarize(runs)
    path = Path(out_file) if out_file else Path(runs_dir) / "summary.csv"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for row in table:
            fh.write(",".join(_fmt(row[c]) if c != "mode" else row[c] for c in SUMMARY_COLUMNS) + "\n")
    return path, table


# ----------------------------------------------------------------------------
# self checks


def verify_all(
    trials: int, seed: int, inject_noninvertible: bool = False, identity_only: bool = False, stream: TextIO | None = None
) -> tuple[int, list[dv.CheckResult]]:
    """Run every divergence check, print a table, return (exit status, results)."""
    stream = stream or sys.stdout
    results = dv.run_checks(trials, seed, inject_noninvertible=inject_noninvertible, identity_only=identity_only)
    stream.write(f"{'check':32s} {'kind':8s} {'worst':>12s} {'tol':>8s}  result\n")
    for r in results:
        stream.write(f"{r.name:32s} {r.kind:8s} {r.worst:12.3e} {r.tolerance:8.0e}  {'ok' if r.passed else 'FAIL'}\n")
    failed = [r.name for r in results if not r.passed]
    stream.write(f"{len(results) - len(failed)}/{len(results)} checks passed ({trials} trials, seed {seed})\n")
    return (EXIT_VERIFY if failed else EXIT_OK), results


@dataclass
class SelfTestResult:
    name: str
    passed: bool
    detail: str = ""


def _every_image_transform() -> list[tf.Transform]:
    out = [tf.Transform(k) for k in tf.Kind if k is not tf.Kind.CROP_CORNER]
    out += [tf.Transform(tf.Kind.CROP_CORNER, corner=c) for c in tf.CORNERS]
    return out


def _every_point_transform() -> list[tf.PointTransform]:
    out = [tf.PointTransform(k) for k in tf.PointKind if k not in (tf.PointKind.TRANSLATE, tf.PointKind.SCALE)]
    return out + [tf.PointTransform(tf.PointKind.TRANSLATE, offset=(0.5, -2.0)), tf.PointTransform(tf.PointKind.SCALE, factor=2.0)]


def _collision(t: tf.Transform, shape) -> tuple[np.ndarray, np.ndarray]:
    """Two different grids with the same image: they differ only in pixels the transform discards."""
    h, w, c = shape
    x = np.zeros(shape)
    y = x.copy()
    if t.kind is tf.Kind.CROP_CORNER:
        # pixels outside the kept window never reach the output
        marker = np.arange(h * w, dtype=np.float64).reshape(h, w, 1) / (h * w) + np.zeros(shape)
        used = np.zeros(shape, dtype=bool)
        img = tf.apply(t, tf.ImageGrid(marker)).pixels
        for v in np.unique(img):
            used |= marker == v
        idx = np.argwhere(~used)[0]
    else:
        # the row/column shifted off the edge
        edge = {
            tf.Kind.TRANSLATE_UP: (0, 0, 0),
            tf.Kind.TRANSLATE_DOWN: (h - 1, 0, 0),
            tf.Kind.TRANSLATE_LEFT: (0, 0, 0),
            tf.Kind.TRANSLATE_RIGHT: (0, w - 1, 0),
        }[t.kind]
        idx = np.array(edge)
    y[tuple(idx)] = 1.0
    return x, y


def collision_pair(t: tf.Transform, shape=(8, 8, 1)) -> tuple[tf.ImageGrid, tf.ImageGrid]:
    x, y = _collision(t, shape)
    return tf.ImageGrid(x), tf.ImageGrid(y)


def transform_self_test(seed: int = 0, grids: int = 100, stream: TextIO | None = None) -> tuple[int, list[SelfTestResult]]:
    """Round trips, non-invertibility, collisions and batch/linear consistency for every transform."""
    stream = stream or sys.stdout
    rng = np.random.default_rng(seed)
    results: list[SelfTestResult] = []
    shapes = [(8, 8, 1), (6, 10, 3), (9, 9, 2)]
    samples = [tf.ImageGrid(rng.uniform(0.0, 1.0, size=shapes[i % len(shapes)])) for i in range(grids)]

    for t in _every_image_transform():
        name = f"image:{t}"
        if t.invertible:
            ok = all(tf.invert(t, tf.apply(t, g)) == g for g in samples)
            results.append(SelfTestResult(f"{name} round trip", ok, f"{grids} grids"))
        else:
            try:
                tf.invert(t, tf.apply(t, samples[0]))
                results.append(SelfTestResult(f"{name} refuses inversion", False, "invert returned"))
            except tf.NonInvertible:
                results.append(SelfTestResult(f"{name} refuses inversion", True))
            a, b = collision_pair(t)
            ok = a != b and tf.apply(t, a) == tf.apply(t, b)
            results.append(SelfTestResult(f"{name} collision pair", ok))
        flat = np.stack([g.pixels.reshape(-1) for g in samples[:10] if g.pixels.shape == shapes[0]])
        matrix, offset = tf.linear_action(t, flat.shape[1], shapes[0])
        ok = np.array_equal(flat @ matrix + offset, tf.apply_batch(t, flat, shapes[0]))
        results.append(SelfTestResult(f"{name} linear action", bool(ok)))

    points = rng.uniform(-4.0, 4.0, size=(grids, 2))
    for t in _every_point_transform():
        name = f"point:{t}"
        back = tf.invert(t, tf.apply(t, points))
        if t.kind in (tf.PointKind.TRANSLATE, tf.PointKind.SCALE):
            err = float(np.max(np.abs(back - points)))
            results.append(SelfTestResult(f"{name} round trip", err <= 1e-12, f"max error {err:.1e}"))
        else:
            results.append(SelfTestResult(f"{name} round trip", bool(np.array_equal(back, points))))
    try:
        tf.invert(tf.PointTransform(tf.PointKind.SCALE, factor=0.0), points)
        results.append(SelfTestResult("point:scale(0) refuses inversion", False))
    except tf.NonInvertible:
        results.append(SelfTestResult("point:scale(0) refuses inversion", True))

    for r in results:
        stream.write(f"{'ok  ' if r.passed else 'FAIL'} {r.name}{'  (' + r.detail + ')' if r.detail else ''}\n")
    failed = sum(not r.passed for r in results)
    stream.write(f"{len(results) - failed}/{len(results)} transform checks passed\n")
    return (EXIT_VERIFY if failed else EXIT_OK), results
