"""Online handwriting trajectories: CSV parsing, stream splitting, cleaning,
synthetic subjects and JSON dataset manifests."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    DuplicateEntry,
    EmptyStream,
    MalformedHeader,
    MissingFile,
    NonMonotonicTime,
    TooFewSamples,
)
from .tasks import DEFAULT_CATEGORIES, TASK_NAMES

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "x", "y", "p", "on_paper")
MIN_SAMPLES = 8
MAX_INTERP_GAP = 5
OUTLIER_FACTOR = 6.0


@dataclass(eq=False)
class RawTrajectory:
    """Timestamped pen samples for one subject x task.

    Arrays share one length; ``on_paper`` is boolean, the rest float64.
    """

    subject_id: str
    task_id: int
    label: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    on_paper: np.ndarray
    dropped_count: int = 0

    def __len__(self):
        return len(self.t)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    def __eq__(self, other):
        if not isinstance(other, RawTrajectory):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.task_id == other.task_id
            and self.label == other.label
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("t", "x", "y", "p", "on_paper")
            )
        )

    def take(self, mask_or_index):
        return replace(
            self,
            t=self.t[mask_or_index],
            x=self.x[mask_or_index],
            y=self.y[mask_or_index],
            p=self.p[mask_or_index],
            on_paper=self.on_paper[mask_or_index],
        )

    def points(self):
        return np.column_stack([self.x, self.y])


def _check_meta(task_id, label):
    if task_id not in TASK_NAMES:
        raise ValueError(f"task_id must be in 1..25, got {task_id}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")


def _parse_bool(s):
    s = s.strip().lower()
    if s in ("1", "true", "t", "yes"):
        return True
    if s in ("0", "false", "f", "no"):
        return False
    raise ValueError(s)


def parse_trajectory_csv(stream, subject_id, task_id, label, fs_hz=None):
    """Parse a ``t,x,y,p,on_paper`` CSV into a validated RawTrajectory.

    ``stream`` may be bytes, str, or a binary/text file object. Rows with a
    non-finite or unparsable field (or pressure outside [0, 1]) are dropped
    and counted in ``dropped_count``. A header without the ``t`` column is
    accepted when ``fs_hz`` is given; times are then ``index / fs_hz``.
    """
    _check_meta(task_id, label)
    if hasattr(stream, "read"):
        stream = stream.read()
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    reader = csv.reader(io.StringIO(stream))
    try:
        header = tuple(h.strip() for h in next(reader))
    except StopIteration:
        raise MalformedHeader("empty file") from None
    if header == CSV_HEADER:
        has_t = True
    elif header == CSV_HEADER[1:] and fs_hz:
        has_t = False
    else:
        raise MalformedHeader(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

    rows = []
    dropped = 0
    for index, row in enumerate(reader):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(header):
                raise ValueError("field count")
            vals = [float(v) for v in row[:-1]]
            on = _parse_bool(row[-1])
        except ValueError:
            dropped += 1
            continue
        if not has_t:
            vals.insert(0, index / fs_hz)
        if not all(math.isfinite(v) for v in vals) or not 0.0 <= vals[3] <= 1.0:
            dropped += 1
            continue
        rows.append((*vals, on))

    if len(rows) < MIN_SAMPLES:
        raise TooFewSamples(f"{len(rows)} valid rows, need at least {MIN_SAMPLES}")
    arr = np.array([r[:4] for r in rows], dtype=np.float64)
    on_paper = np.array([r[4] for r in rows], dtype=bool)
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise NonMonotonicTime("timestamps are not strictly increasing")
    return RawTrajectory(
        subject_id, task_id, label, arr[:, 0].copy(), arr[:, 1].copy(),
        arr[:, 2].copy(), arr[:, 3].copy(), on_paper, dropped_count=dropped,
    )


def write_trajectory_csv(traj):
    """Serialize to CSV bytes; float repr round-trips exactly."""
    out = io.StringIO()
    out.write(",".join(CSV_HEADER) + "\n")
    for t, x, y, p, on in zip(traj.t, traj.x, traj.y, traj.p, traj.on_paper):
        out.write(f"{float(t)!r},{float(x)!r},{float(y)!r},{float(p)!r},{int(on)}\n")
    return out.getvalue().encode("utf-8")


def split_streams(traj):
    """Return ``{"paper", "air", "all"}``; raises EmptyStream if nothing touched paper."""
    paper = traj.take(traj.on_paper)
    if len(paper) == 0:
        raise EmptyStream(f"{traj.subject_id}/task {traj.task_id}: no pen-contact samples")
    return {"paper": paper, "air": traj.take(~traj.on_paper), "all": traj}


def estimate_rate(t):
    return 1.0 / float(np.median(np.diff(t)))


def stroke_breaks(t, fs_hz):
    """Indices i where samples i-1 and i belong to different strokes."""
    return np.flatnonzero(np.diff(t) > 1.5 / fs_hz) + 1


def remove_outliers(traj, fs_hz, factor=OUTLIER_FACTOR):
    """Drop isolated digitizer spikes.

    A sample is a spike when both its incoming and outgoing segment speeds
    exceed ``median + factor * scale``, with ``scale`` = IQR / 1.349 of the
    segment speeds (floored at 1e-3 of the median so constant-speed strokes
    are left alone). Segments that cross a stroke break are ignored.
    """
    if len(traj) < 3:
        return traj
    dt = np.diff(traj.t)
    seg = np.hypot(np.diff(traj.x), np.diff(traj.y)) / dt
    within = dt <= 1.5 / fs_hz
    if not within.any():
        return traj
    speeds = seg[within]
    q1, med, q3 = np.percentile(speeds, [25, 50, 75])
    scale = max((q3 - q1) / 1.349, 1e-3 * med, 1e-12)
    fast = within & (seg > med + factor * scale)
    spike = np.zeros(len(traj), dtype=bool)
    spike[1:-1] = fast[:-1] & fast[1:]
    if not spike.any():
        return traj
    return traj.take(~spike)


def fill_gaps(traj, fs_hz, max_gap=MAX_INTERP_GAP):
    """Linearly interpolate runs of at most ``max_gap`` missing samples.

    Longer gaps are left open and act as stroke breaks downstream.
    """
    if len(traj) < 2:
        return traj
    dt = np.diff(traj.t)
    missing = np.rint(dt * fs_hz).astype(np.int64) - 1
    fill = (dt > 1.5 / fs_hz) & (missing <= max_gap)
    if not fill.any():
        return traj
    pieces = {k: [] for k in ("t", "x", "y", "p", "on_paper")}
    start = 0
    for i in np.flatnonzero(fill):
        for k in pieces:
            pieces[k].append(getattr(traj, k)[start : i + 1])
        m = int(missing[i])
        frac = np.arange(1, m + 1) / (m + 1)
        for k in ("t", "x", "y", "p"):
            a = getattr(traj, k)
            pieces[k].append(a[i] + frac * (a[i + 1] - a[i]))
        pieces["on_paper"].append(np.full(m, traj.on_paper[i] and traj.on_paper[i + 1]))
        start = i + 1
    for k in pieces:
        pieces[k].append(getattr(traj, k)[start:])
    return replace(traj, **{k: np.concatenate(v) for k, v in pieces.items()})


def clean_trajectory(traj, fs_hz=None):
    """Outlier removal followed by short-gap interpolation."""
    fs = fs_hz or estimate_rate(traj.t)
    return fill_gaps(remove_outliers(traj, fs), fs)


# ---------------------------------------------------------------------------
# synthetic subjects

LINE_TASKS = {2: "h", 3: "v"}
CIRCLE_TASKS = {4: 60.0, 5: 20.0}
DIGIT_TASKS = {19, 22, 23}


def _rng(*key):
    return np.random.default_rng([int(k) & 0xFFFFFFFF for k in key])


def _word_stroke(rng, x0, n_letters, height):
    xs, ys = [], []
    step = height * rng.uniform(0.45, 0.6)
    for i in range(n_letters):
        cx = x0 + i * step
        tall = rng.random() < 0.3
        xs += [cx, cx + 0.35 * step, cx + 0.7 * step]
        ys += [0.0, -(height * (1.8 if tall else 1.0)) * rng.uniform(0.85, 1.1), 0.0]
    xs.append(x0 + n_letters * step + 0.3 * step)
    ys.append(-0.2 * height)
    return np.column_stack([xs, ys])


def _digit_stroke(rng, x0, height):
    n = int(rng.integers(3, 6))
    width = height * 0.55
    xs = x0 + np.linspace(0, width, n) + rng.normal(0, 0.08 * width, n)
    ys = np.where(np.arange(n) % 2 == 0, 0.0, -height) + rng.normal(0, 0.08 * height, n)
    return np.column_stack([xs, ys])


def _circle(cx, cy, r, start, n=48):
    a = start + np.linspace(0, 2 * np.pi, n)
    return np.column_stack([cx + r * np.cos(a), cy + r * np.sin(a)])


def template_control_points(seed, task_id):
    """Per-stroke control polylines for a task; depends only on (seed, task)."""
    rng = _rng(seed, task_id, 0)
    if task_id in LINE_TASKS:
        length = rng.uniform(120, 180)
        wobble = rng.normal(0, 1.0, 2)
        if LINE_TASKS[task_id] == "h":
            return [np.array([[0.0, wobble[0]], [length, wobble[1]]])]
        return [np.array([[wobble[0], 0.0], [wobble[1], length]])]
    if task_id in CIRCLE_TASKS:
        r = CIRCLE_TASKS[task_id] * rng.uniform(0.9, 1.1)
        return [_circle(0.0, 0.0, r, rng.uniform(0, 2 * np.pi))]
    if task_id == 24:
        r = 55 * rng.uniform(0.9, 1.1)
        face = _circle(0.0, 0.0, r, rng.uniform(0, 2 * np.pi))
        a1, a2 = rng.uniform(0, 2 * np.pi, 2)
        hands = [
            np.array([[0.0, 0.0], [0.5 * r * np.cos(a1), 0.5 * r * np.sin(a1)]]),
            np.array([[0.0, 0.0], [0.8 * r * np.cos(a2), 0.8 * r * np.sin(a2)]]),
        ]
        return [face, *hands]
    if task_id == 21:
        lobes = int(rng.integers(3, 6))
        a = rng.uniform(0, 2 * np.pi) + np.linspace(0, 2 * np.pi, 97)
        rad = 50.0 * rng.uniform(0.9, 1.1) * (1 + 0.3 * np.cos(lobes * a))
        return [np.column_stack([rad * np.cos(a), rad * np.sin(a)])]
    height = rng.uniform(14, 22)
    strokes = []
    x = 0.0
    if task_id in DIGIT_TASKS:
        for _ in range(int(rng.integers(6, 10))):
            strokes.append(_digit_stroke(rng, x, height))
            x += height * rng.uniform(0.8, 1.0)
        return strokes
    n_words = 1 if task_id in (1, 8, 9, 10, 11, 12, 13, 15, 16, 18) else int(rng.integers(2, 4))
    for _ in range(n_words):
        n_letters = int(rng.integers(2, 6)) if task_id == 9 else int(rng.integers(4, 8))
        stroke = _word_stroke(rng, x, n_letters, height)
        strokes.append(stroke)
        x = stroke[-1, 0] + height * rng.uniform(0.8, 1.2)
    return strokes


def _densify(ctrl, fs, speed, smooth):
    """Sample a stroke at ``fs`` with a minimum-jerk speed profile."""
    if smooth and len(ctrl) > 2:
        chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(ctrl, axis=0).T))])
        spline = CubicSpline(chord, ctrl, axis=0)
        fine = spline(np.linspace(0, chord[-1], max(int(chord[-1] / 0.05), 2)))
    else:
        fine = ctrl
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(fine, axis=0).T))])
    length = arc[-1]
    duration = max(length / speed * 1.875, 0.25)
    n = max(int(round(duration * fs)), 2)
    tau = np.linspace(0, 1, n)
    s = length * (10 * tau**3 - 15 * tau**4 + 6 * tau**5)
    return np.column_stack([np.interp(s, arc, fine[:, 0]), np.interp(s, arc, fine[:, 1])])


def _base_path(seed, task_id, fs):
    rng = _rng(seed, task_id, 1)
    speed = rng.uniform(70, 110)
    smooth = task_id not in LINE_TASKS and task_id not in (24,)
    pts, pres, on = [], [], []
    prev = None
    for stroke in template_control_points(seed, task_id):
        if task_id == 24 and len(stroke) > 2:
            seg = _densify(stroke, fs, speed, smooth=True)
        else:
            seg = _densify(stroke, fs, speed, smooth)
        if prev is not None:
            n_air = int(round(rng.uniform(0.15, 0.3) * fs))
            f = np.linspace(0, 1, n_air + 2)[1:-1, None]
            pts.append(prev + f * (seg[0] - prev))
            pres.append(np.zeros(n_air))
            on.append(np.zeros(n_air, dtype=bool))
        m = len(seg)
        u = np.linspace(0, 1, m)
        envelope = np.minimum(1.0, np.minimum(u, 1 - u) * 8 + 0.3)
        base_p = rng.uniform(0.45, 0.7)
        pres.append(np.clip(base_p * envelope + 0.05 * np.sin(2 * np.pi * u), 0.05, 1.0))
        pts.append(seg)
        on.append(np.ones(m, dtype=bool))
        prev = seg[-1]
    pts = np.concatenate(pts)
    return pts, np.concatenate(pres), np.concatenate(on)


def _path_frame(pts):
    """Unit tangent and normal along a sampled path.

    Where the pen is momentarily still the last known direction is held.
    """
    d = np.gradient(pts, axis=0)
    n = np.hypot(d[:, 0], d[:, 1])
    moving = n > 1e-9
    if not moving.any():
        tangent = np.tile([1.0, 0.0], (len(pts), 1))
    else:
        idx = np.where(moving, np.arange(len(n)), 0)
        np.maximum.accumulate(idx, out=idx)
        idx[: np.argmax(moving)] = np.argmax(moving)
        tangent = d[idx] / n[idx, None]
    return tangent, np.column_stack([-tangent[:, 1], tangent[:, 0]])


def synth_subject(
    seed,
    condition,
    task_id,
    fs_hz=200.0,
    *,
    subject_id=None,
    tremor_amplitude=2.0,
    drift_rate=4.0,
    hesitations=2,
):
    """Deterministic synthetic trajectory for one (seed, condition, task).

    ``healthy`` returns the smooth template path. ``impaired`` overlays the
    same template with a 4-8 Hz tremor of ``tremor_amplitude`` tablet units,
    a slow baseline drift and a few pen hesitations. The tremor circles in
    the path's own tangent/normal frame, so the pen speed oscillates at the
    tremor frequency whichever way the stroke is heading.
    """
    if task_id not in TASK_NAMES:
        raise ValueError(f"task_id must be in 1..25, got {task_id}")
    if condition not in ("healthy", "impaired"):
        raise ValueError(f"unknown condition {condition!r}")
    pts, p, on = _base_path(seed, task_id, fs_hz)
    label = 0
    if condition == "impaired":
        label = 1
        rng = _rng(seed, task_id, 2)
        if hesitations:
            paper_idx = np.flatnonzero(on)
            where = np.sort(rng.choice(paper_idx[5:-5], size=hesitations, replace=False))
            reps = np.ones(len(pts), dtype=np.int64)
            reps[where] += rng.integers(int(0.1 * fs_hz), int(0.25 * fs_hz), size=hesitations)
            pts, p, on = np.repeat(pts, reps, axis=0), np.repeat(p, reps), np.repeat(on, reps)
        t = np.arange(len(pts)) / fs_hz
        # kept half a DFT bin inside 4-8 Hz so the speed peak stays in band
        freq = rng.uniform(4.25, 7.75)
        phase = rng.uniform(0, 2 * np.pi)
        w = 2 * np.pi * freq * t + phase
        drift = drift_rate * rng.choice([-1.0, 1.0]) * t
        tangent, normal = _path_frame(pts)
        pts = pts + tremor_amplitude * (np.sin(w)[:, None] * tangent + np.cos(w)[:, None] * normal)
        pts[:, 1] += drift
    t = np.arange(len(pts)) / fs_hz
    sid = subject_id if subject_id is not None else f"synth-{seed}"
    return RawTrajectory(sid, task_id, label, t, pts[:, 0].copy(), pts[:, 1].copy(), p, on)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    path: str
    subject: str
    task: int
    label: int


@dataclass
class DatasetManifest:
    sampling_rate_hz: float
    entries: list = field(default_factory=list)
    root: Path = field(default_factory=Path)

    def resolve(self, entry):
        return self.root / entry.path

    def validate(self, check_files=True):
        seen = set()
        for e in self.entries:
            key = (e.subject, e.task)
            if key in seen:
                raise DuplicateEntry(f"duplicate entry for subject {e.subject!r}, task {e.task}")
            seen.add(key)
            if check_files and not self.resolve(e).is_file():
                raise MissingFile(str(self.resolve(e)))


def read_manifest(path):
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    entries = [
        ManifestEntry(e["path"], str(e["subject"]), int(e["task"]), int(e["label"]))
        for e in raw.get("entries", [])
    ]
    return DatasetManifest(float(raw["sampling_rate_hz"]), entries, path.parent)


def manifest_json(manifest):
    doc = {
        "sampling_rate_hz": manifest.sampling_rate_hz,
        "entries": [
            {"path": e.path, "subject": e.subject, "task": e.task, "label": e.label}
            for e in manifest.entries
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def write_manifest(manifest, path):
    Path(path).write_text(manifest_json(manifest))


@dataclass
class Dataset:
    """Trajectories grouped by task id, in manifest order."""

    groups: dict
    sampling_rate_hz: float

    def __getitem__(self, task_id):
        return self.groups[task_id]

    def __len__(self):
        return len(self.groups)

    def label_balance(self):
        return {
            t: (sum(1 for _, y in items if y == 0), sum(1 for _, y in items if y == 1))
            for t, items in self.groups.items()
        }


def load_dataset(manifest):
    if not manifest.entries:
        log.warning("manifest has no entries")
        return Dataset({}, manifest.sampling_rate_hz)
    manifest.validate()
    groups = {}
    for e in manifest.entries:
        with open(manifest.resolve(e), "rb") as fh:
            traj = parse_trajectory_csv(fh, e.subject, e.task, e.label)
        groups.setdefault(e.task, []).append((traj, e.label))
    ds = Dataset(groups, manifest.sampling_rate_hz)
    for task, (n0, n1) in ds.label_balance().items():
        log.info("task %d: %d normal / %d abnormal", task, n0, n1)
    return ds


def synth_dataset(out_dir, seed, subjects, tasks, fs_hz=200.0):
    """Write a balanced synthetic cohort: first half healthy, second half impaired."""
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    n_healthy = subjects // 2
    for s in range(subjects):
        condition = "healthy" if s < n_healthy else "impaired"
        sid = f"S{s + 1:03d}"
        for task in tasks:
            traj = synth_subject(seed * 100_003 + s, condition, task, fs_hz, subject_id=sid)
            rel = f"task{task:02d}/{sid}.csv"
            os.makedirs(out_dir / f"task{task:02d}", exist_ok=True)
            (out_dir / rel).write_bytes(write_trajectory_csv(traj))
            entries.append(ManifestEntry(rel, sid, task, traj.label))
    manifest = DatasetManifest(fs_hz, entries, out_dir)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest


__all__ = [
    "RawTrajectory",
    "DatasetManifest",
    "ManifestEntry",
    "Dataset",
    "DEFAULT_CATEGORIES",
    "parse_trajectory_csv",
    "write_trajectory_csv",
    "split_streams",
    "clean_trajectory",
    "synth_subject",
    "template_control_points",
    "read_manifest",
    "write_manifest",
    "load_dataset",
    "synth_dataset",
]
