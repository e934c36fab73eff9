"""Image-level AUC, cross-task matrices and transfer analytics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import anomaly_score
from .errors import ShapeMismatch, SingleClass, UncategorizedTask
from .render import ppm_bytes
from .tasks import DEFAULT_CATEGORIES


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    task_id: int = 0


def roc_auc(scores, labels=None):
    """Tie-corrected Mann-Whitney AUC: P(s+ > s-) + 0.5 P(s+ == s-).

    Accepts a ScoredSet or parallel score/label sequences.
    """
    if isinstance(scores, ScoredSet):
        scores, labels = scores.scores, scores.labels
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ShapeMismatch(f"scores {s.shape} vs labels {y.shape}")
    pos, neg = s[y == 1], np.sort(s[y == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass(f"need both labels, got {len(pos)} positive and {len(neg)} negative")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    # integer half-credits keep the sum exact before the final division
    twice_u = 2 * int(below.sum()) + int((upto - below).sum())
    return twice_u / (2 * len(pos) * len(neg))


# ---------------------------------------------------------------------------
# matrices


@dataclass
class AUCMatrix:
    """Percent AUCs, rows = training (source) tasks, columns = test (target) tasks.

    NaN marks a cell that could not be evaluated. ``counts`` holds the
    number of scored samples per cell.
    """

    values: np.ndarray
    sources: tuple
    targets: tuple
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.sources = tuple(int(t) for t in self.sources)
        self.targets = tuple(int(t) for t in self.targets)
        if self.values.shape != (len(self.sources), len(self.targets)):
            raise ShapeMismatch(f"values {self.values.shape} vs {len(self.sources)}x{len(self.targets)} ids")

    @property
    def shape(self):
        return self.values.shape

    def off_diagonal(self):
        """Boolean mask of cells whose source and target differ."""
        return np.not_equal.outer(np.array(self.sources), np.array(self.targets))

    def cell(self, source, target):
        return self.values[self.sources.index(source), self.targets.index(target)]


def score_samples(backbone, stack, E, samples):
    return np.array([anomaly_score(backbone, stack, E, prefix=s.prefix) for s in samples])


def _row(backbone, stack, datasets, prototypes, targets):
    vals, counts = [], []
    for t in targets:
        samples = datasets[t]
        scores = score_samples(backbone, stack, prototypes[t], samples)
        try:
            vals.append(100.0 * roc_auc(scores, [s.label for s in samples]))
        except SingleClass:
            vals.append(math.nan)
        counts.append(len(samples))
    return vals, counts


def cross_task_matrix(checkpoints, datasets, prototypes, backbone, targets=None, jobs=1):
    """Cell (i, j) = 100 * AUC of the task-i adapters on task-j samples.

    ``checkpoints`` maps source task -> AdapterStack, ``datasets`` maps
    target task -> list of Sample, ``prototypes`` maps target task -> T x 2
    matrix. Rows may be computed by ``jobs`` worker processes.
    """
    sources = sorted(checkpoints)
    targets = sorted(datasets) if targets is None else list(targets)
    E = {t: np.asarray(getattr(prototypes[t], "matrix", prototypes[t])) for t in targets}
    args = [(backbone, checkpoints[s], datasets, E, targets) for s in sources]
    if jobs > 1 and len(sources) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_row, *zip(*args)))
    else:
        rows = [_row(*a) for a in args]
    return AUCMatrix(np.array([r[0] for r in rows]), sources, targets, np.array([r[1] for r in rows]))


@dataclass
class RowColMeans:
    rows: np.ndarray
    cols: np.ndarray
    grand: float


def _nanmean(values, axis=None):
    finite = np.isfinite(values)
    total = np.where(finite, values, 0.0).sum(axis=axis)
    n = finite.sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        return total / n


def row_col_means(matrix, include_diagonal=True):
    """Row and column means (diagonal per flag) and the off-diagonal grand mean.

    Missing cells are left out of every mean.
    """
    vals = matrix.values
    off = matrix.off_diagonal()
    masked = vals if include_diagonal else np.where(off, vals, np.nan)
    grand = _nanmean(np.where(off, vals, np.nan))
    return RowColMeans(_nanmean(masked, axis=1), _nanmean(masked, axis=0), float(grand))


def diff_matrix(a, b):
    if a.sources != b.sources or a.targets != b.targets:
        raise ShapeMismatch(f"matrices cover different tasks: {a.shape} vs {b.shape}")
    return AUCMatrix(a.values - b.values, a.sources, a.targets)


def top_k_improvements(diff, k):
    """Largest off-diagonal deltas as (source, target, delta), ties by ids."""
    cells = []
    for i, s in enumerate(diff.sources):
        for j, t in enumerate(diff.targets):
            d = diff.values[i, j]
            if s != t and np.isfinite(d):
                cells.append((s, t, float(d)))
    cells.sort(key=lambda c: (-c[2], c[0], c[1]))
    return cells[: max(int(k), 0)]


@dataclass
class BucketStats:
    count: int
    min: float = math.nan
    q1: float = math.nan
    median: float = math.nan
    q3: float = math.nan
    max: float = math.nan


def category_aggregate(matrix, categories=None, threshold=65.0):
    """Distribution of off-diagonal cells above ``threshold`` per (source, target) category pair.

    ``categories`` maps task id -> category label. Quantiles interpolate linearly.
    """
    cat_of = {int(t): c for t, c in (DEFAULT_CATEGORIES if categories is None else categories).items()}
    for t in sorted(set(matrix.sources) | set(matrix.targets)):
        if t not in cat_of:
            raise UncategorizedTask(f"task {t} has no category")
    names = sorted(set(cat_of.values()))
    buckets = {(a, b): [] for a in names for b in names}
    for i, s in enumerate(matrix.sources):
        for j, t in enumerate(matrix.targets):
            v = matrix.values[i, j]
            if s != t and np.isfinite(v) and v > threshold:
                buckets[cat_of[s], cat_of[t]].append(v)
    out = {}
    for key, vals in buckets.items():
        if not vals:
            out[key] = BucketStats(0)
            continue
        q = np.quantile(np.array(vals), [0.0, 0.25, 0.5, 0.75, 1.0])
        out[key] = BucketStats(len(vals), *(float(x) for x in q))
    return out


# ---------------------------------------------------------------------------
# report files


def _fmt(v, digits=2):
    return "NA" if not np.isfinite(v) else f"{v:.{digits}f}"


def matrix_csv(matrix):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source\\target"] + list(matrix.targets))
    for s, row in zip(matrix.sources, matrix.values):
        w.writerow([s] + [_fmt(v) for v in row])
    return buf.getvalue()


def parse_matrix_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or len(rows[0]) < 2:
        raise ShapeMismatch("empty matrix file")
    targets = [int(t) for t in rows[0][1:]]
    sources, values = [], []
    for r in rows[1:]:
        if len(r) != len(targets) + 1:
            raise ShapeMismatch(f"row {r[:1]} has {len(r) - 1} cells, expected {len(targets)}")
        sources.append(int(r[0]))
        values.append([math.nan if c == "NA" else float(c) for c in r[1:]])
    return AUCMatrix(np.array(values, dtype=np.float64).reshape(len(sources), len(targets)), sources, targets)


def heatmap_image(matrix, block=8):
    """RGB in [0, 1]: blue (min) -> white -> red (max), gray where a cell is missing."""
    vals = matrix.values
    finite = np.isfinite(vals)
    if finite.any():
        lo, hi = float(vals[finite].min()), float(vals[finite].max())
    else:
        lo = hi = 0.0
    u = np.full(vals.shape, 0.5) if hi == lo else (np.where(finite, vals, lo) - lo) / (hi - lo)
    rgb = np.empty(vals.shape + (3,))
    low = u < 0.5
    rgb[..., 0] = np.where(low, 2 * u, 1.0)
    rgb[..., 1] = np.where(low, 2 * u, 2 * (1 - u))
    rgb[..., 2] = np.where(low, 1.0, 2 * (1 - u))
    rgb[~finite] = 0.5
    return np.repeat(np.repeat(rgb, block, axis=0), block, axis=1)


def emit_report(matrix, out_dir, diff=None, k=100, categories=None, threshold=65.0):
    """Write matrix.csv, rowcol_means.csv, category_stats.csv, summary.json, heatmap.ppm
    and, when a baseline diff is given, top_k.csv. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, data):
        p = out / name
        p.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
        written.append(p)

    put("matrix.csv", matrix_csv(matrix))

    incl, excl = row_col_means(matrix, True), row_col_means(matrix, False)
    lines = ["axis,task_id,mean_incl_diag,mean_excl_diag"]
    for axis, ids, a, b in (("row", matrix.sources, incl.rows, excl.rows),
                            ("col", matrix.targets, incl.cols, excl.cols)):
        lines += [f"{axis},{t},{_fmt(x, 4)},{_fmt(y, 4)}" for t, x, y in zip(ids, a, b)]
    put("rowcol_means.csv", "\n".join(lines) + "\n")

    if diff is not None:
        rows = ["rank,source,target,delta"]
        rows += [f"{r},{s},{t},{d:.4f}" for r, (s, t, d) in enumerate(top_k_improvements(diff, k), 1)]
        put("top_k.csv", "\n".join(rows) + "\n")

    stats = category_aggregate(matrix, categories, threshold)
    rows = ["source_cat,target_cat,count,min,q1,median,q3,max"]
    for (a, b), st in stats.items():
        rows.append(",".join([a, b, str(st.count)] + [_fmt(v, 4) for v in
                                                      (st.min, st.q1, st.median, st.q3, st.max)]))
    put("category_stats.csv", "\n".join(rows) + "\n")

    summary = {
        "sources": list(matrix.sources),
        "targets": list(matrix.targets),
        "grand_offdiag_mean": None if not np.isfinite(incl.grand) else round(incl.grand, 6),
        "missing_cells": int((~np.isfinite(matrix.values)).sum()),
        "threshold": threshold,
    }
    if diff is not None:
        summary["top_k"] = len(top_k_improvements(diff, k))
    put("summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    put("heatmap.ppm", ppm_bytes(heatmap_image(matrix)))
    return written
