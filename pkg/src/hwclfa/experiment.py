"""In-memory synthetic experiments: cohort -> prefixes -> per-source training -> AUC matrix."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .backbone import frozen_prefix
from .evaluator import cross_task_matrix
from .ingest import synth_subject
from .prototypes import build_all, make_encoder
from .render import render_trajectory
from .tasks import task_meta
from .trainer import Sample, train


def synthetic_samples(backbone, seed, subjects, tasks, fs_hz=200.0):
    """Same cohort as ``synth_dataset`` (first half healthy), rendered and encoded."""
    out = {}
    for task in tasks:
        rows = []
        for s in range(subjects):
            condition = "healthy" if s < subjects // 2 else "impaired"
            sid = f"S{s + 1:03d}"
            traj = synth_subject(seed * 100_003 + s, condition, task, fs_hz, subject_id=sid)
            img = render_trajectory(traj, fs_hz=fs_hz)
            rows.append(Sample(sid, task, traj.label, frozen_prefix(backbone, img)))
        out[task] = rows
    return out


@dataclass
class MatrixRun:
    matrix: object
    stacks: dict
    losses: dict
    seconds: float


def run_matrix(backbone, samples, sources, targets, config, encoder="lexical", encoder_seed=0, jobs=1):
    """Train one adapter stack per source task and score every target."""
    t0 = time.perf_counter()
    tasks = sorted(set(sources) | set(targets))
    protos = build_all(make_encoder(encoder, encoder_seed, config.bottleneck), [task_meta(t) for t in tasks])
    stacks, losses = {}, {}
    for s in sources:
        res = train(samples, s, config, backbone, protos[s].matrix)
        stacks[s], losses[s] = res.stack, res.losses
    matrix = cross_task_matrix(stacks, samples, protos, backbone, targets, jobs=jobs)
    return MatrixRun(matrix, stacks, losses, time.perf_counter() - t0)
