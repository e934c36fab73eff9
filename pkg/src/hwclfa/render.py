"""Kinematics of a pen trajectory and its rasterization into an RGB image.

Red encodes curvature, green speed and blue jerk magnitude. Stroke width
follows pen pressure and the whole image is brightened by the dominant
frequency of the speed signal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateExtent, DegenerateTime, SeriesTooShort
from .ingest import clean_trajectory, estimate_rate, split_streams

CANVAS_SIZE = 240
CANVAS_MARGIN = 8
R_MIN = 1.0
R_MAX = 3.0
SPEED_EPS = 1e-6
BAND = (0.5, 20.0)


@dataclass
class KinematicSeries:
    vx: np.ndarray
    vy: np.ndarray
    speed: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    acceleration: np.ndarray
    jx: np.ndarray
    jy: np.ndarray
    jerk: np.ndarray
    curvature: np.ndarray
    pressure: np.ndarray

    def __len__(self):
        return len(self.speed)


def _stroke_slices(t):
    dt = np.diff(t)
    if len(dt) == 0:
        return [slice(0, len(t))]
    breaks = np.flatnonzero(dt > 1.5 * np.median(dt)) + 1
    edges = [0, *breaks.tolist(), len(t)]
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _derivative(f, t):
    if len(t) < 2:
        return np.zeros_like(f)
    return np.gradient(f, t, edge_order=2 if len(t) >= 3 else 1)


def compute_kinematics(traj, eps=SPEED_EPS):
    """Per-sample derivatives, computed stroke by stroke.

    Samples separated by more than 1.5 median sampling intervals belong to
    different strokes and are never differenced against each other.
    """
    t = np.asarray(traj.t, dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        raise DegenerateTime("timestamps must be strictly increasing")
    out = {k: np.zeros(len(t)) for k in ("vx", "vy", "ax", "ay", "jx", "jy")}
    for sl in _stroke_slices(t):
        ts = t[sl]
        out["vx"][sl] = vx = _derivative(traj.x[sl], ts)
        out["vy"][sl] = vy = _derivative(traj.y[sl], ts)
        out["ax"][sl] = ax = _derivative(vx, ts)
        out["ay"][sl] = ay = _derivative(vy, ts)
        out["jx"][sl] = _derivative(ax, ts)
        out["jy"][sl] = _derivative(ay, ts)
    speed = np.hypot(out["vx"], out["vy"])
    cross = np.abs(out["vx"] * out["ay"] - out["vy"] * out["ax"])
    curvature = np.zeros(len(t))
    moving = speed >= eps
    curvature[moving] = cross[moving] / speed[moving] ** 3
    return KinematicSeries(
        speed=speed,
        acceleration=np.hypot(out["ax"], out["ay"]),
        jerk=np.hypot(out["jx"], out["jy"]),
        curvature=curvature,
        pressure=np.asarray(traj.p, dtype=np.float64).copy(),
        **out,
    )


def dominant_frequency(speed, fs_hz, band=BAND):
    """Peak of the magnitude spectrum of the mean-removed speed in ``band``.

    A flat (numerically zero) spectrum returns the lowest in-band frequency.
    """
    speed = np.asarray(speed, dtype=np.float64)
    if len(speed) < 16:
        raise SeriesTooShort(f"need at least 16 samples, got {len(speed)}")
    mag = np.abs(np.fft.rfft(speed - speed.mean()))
    freqs = np.fft.rfftfreq(len(speed), 1.0 / fs_hz)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not in_band.any():
        return float(band[0])
    mag, freqs = mag[in_band], freqs[in_band]
    scale = len(speed) * max(float(np.mean(np.abs(speed))), 1e-300)
    if mag.max() <= 1e-9 * scale:
        return float(freqs[0])
    return float(freqs[np.argmax(mag)])


def frequency_boost(f_dom, band=BAND):
    lo, hi = band
    return 1.0 + 0.5 * float(np.clip((f_dom - lo) / (hi - lo), 0.0, 1.0))


def normalize_canvas(points, size=CANVAS_SIZE, margin=CANVAS_MARGIN):
    """Aspect-preserving min-max map into [margin, size - margin]^2."""
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    span = pts.max(axis=0) - lo
    extent = span.max()
    if not extent > 0:
        raise DegenerateExtent("all points are identical")
    avail = size - 2 * margin
    scale = avail / extent
    offset = margin + (avail - span * scale) / 2
    return (pts - lo) * scale + offset


def robust_channel(values, floor=0.0):
    """Percentile 5/95 scaling to [0, 1]; values at or below ``floor`` count as 0.

    A channel with no spread maps positive values to 1.
    """
    c = np.where(np.abs(values) > floor, np.abs(values), 0.0)
    if not c.any():
        return c
    lo, hi = np.percentile(c, [5, 95])
    if hi - lo <= 1e-9 * max(abs(hi), abs(lo)):
        return (c > 0).astype(np.float64)
    return np.clip((c - lo) / (hi - lo), 0.0, 1.0)


def kinematic_colors(traj, kin):
    """Per-sample RGB from curvature, speed and jerk."""
    pts = traj.points()
    extent = float((pts.max(axis=0) - pts.min(axis=0)).max()) or 1.0
    dt = float(np.median(np.diff(traj.t))) if len(traj) > 1 else 1.0
    v_ref = max(float(np.median(kin.speed)), 1e-12)
    return np.column_stack([
        robust_channel(kin.curvature, floor=1e-6 / extent),
        robust_channel(kin.speed),
        robust_channel(kin.jerk, floor=1e-6 * v_ref / dt**2),
    ])


def _expand_path(px, colors, pressure, t):
    """Insert points so consecutive stamps are at most 1 px apart (within strokes)."""
    xs, ys, cs, ps = [], [], [], []
    for sl in _stroke_slices(t):
        p_xy = px[sl]
        col = colors[sl]
        pr = pressure[sl]
        if len(p_xy) == 1:
            xs.append(p_xy[:, 0]); ys.append(p_xy[:, 1]); cs.append(col); ps.append(pr)
            continue
        seg = np.hypot(*np.diff(p_xy, axis=0).T)
        n = np.maximum(np.ceil(seg).astype(np.int64), 1)
        owner = np.repeat(np.arange(len(seg)), n)
        frac = (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)) / np.repeat(n, n)
        f = frac[:, None]
        xy = p_xy[owner] + f * (p_xy[owner + 1] - p_xy[owner])
        xs.append(np.append(xy[:, 0], p_xy[-1, 0]))
        ys.append(np.append(xy[:, 1], p_xy[-1, 1]))
        cs.append(np.vstack([col[owner] + f * (col[owner + 1] - col[owner]), col[-1:]]))
        ps.append(np.append(pr[owner] + frac * (pr[owner + 1] - pr[owner]), pr[-1]))
    return np.concatenate(xs), np.concatenate(ys), np.vstack(cs), np.concatenate(ps)


def rasterize(traj, kin, size=CANVAS_SIZE, *, margin=CANVAS_MARGIN, fs_hz=None,
              r_min=R_MIN, r_max=R_MAX):
    """Render the pen-contact stream of ``traj`` into an ``size x size x 3`` image."""
    px = normalize_canvas(traj.points(), size, margin)
    colors = kinematic_colors(traj, kin)
    xs, ys, cs, ps = _expand_path(px, colors, kin.pressure, np.asarray(traj.t))
    radii = r_min + np.clip(ps, 0.0, 1.0) * (r_max - r_min)
    canvas = np.zeros((size, size, 3), dtype=np.float64)
    kernels.stamp_discs(canvas, xs, ys, radii, cs)
    fs = fs_hz or estimate_rate(traj.t)
    if len(kin.speed) >= 16:
        canvas *= frequency_boost(dominant_frequency(kin.speed, fs))
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return canvas


def render_trajectory(traj, size=CANVAS_SIZE, fs_hz=None, clean=True):
    """Full pipeline: paper stream, cleaning, kinematics, rasterization."""
    paper = split_streams(traj)["paper"]
    fs = fs_hz or estimate_rate(traj.t)
    if clean:
        paper = clean_trajectory(paper, fs)
    return rasterize(paper, compute_kinematics(paper), size, fs_hz=fs)


def ppm_bytes(image):
    """Binary P6 pixmap, 8 bits per channel."""
    img = np.asarray(image)
    h, w, _ = img.shape
    q = np.rint(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def read_ppm(data):
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a P6 pixmap")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
