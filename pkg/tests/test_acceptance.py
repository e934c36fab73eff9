"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances are pinned here as module constants. Criterion 5 trains the
full 25 x 25 matrix twice (about ten minutes on one core).
"""
import time

import numpy as np
import pytest

from hwclfa import kernels
from hwclfa.adapter import adapter_forward, init_adapters, stack_grad_check
from hwclfa.backbone import forward_with_hooks
from hwclfa.evaluator import (
    AUCMatrix,
    diff_matrix,
    emit_report,
    matrix_csv,
    parse_matrix_csv,
    roc_auc,
    top_k_improvements,
)
from hwclfa.experiment import run_matrix, synthetic_samples
from hwclfa.ingest import RawTrajectory, synth_subject
from hwclfa.prototypes import embed_prototypes, stub_encoder
from hwclfa.render import compute_kinematics, dominant_frequency, rasterize, render_trajectory
from hwclfa.tasks import ALL_TASKS, task_meta
from hwclfa.trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from hwclfa import tensor as tn

from oracles import brute_auc, naive_conv, scripted_prototypes

GRAD_REL_TOL = 1e-4
GRAD_SECONDS = 60.0
IDENTITY_TOL = 1e-12
CONV_TOL = 1e-12
AUC_TOL = 1e-12
PROTO_TOL = 1e-7
ORACLE_CASES = 200
FREEZE_STEPS = 500
UNSEEN_AUC_MIN = 0.80
MATRIX_SECONDS = 30 * 60
DELTA_ROUNDING = 0.01
CURVATURE_REL = 0.02
FREQ_BIN_HZ = 0.5
CSV_QUANTUM = 0.005

DESK_T = 16
DATA_SEED = 7
SUBJECTS = 40
SOURCE_TASK = 9
UNSEEN = (1, 5, 12, 18, 24)


VERDICTS = []


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS.append(line)
    print("\n" + line)
    assert ok, line


def _desk_stack(seed, width, rng):
    stack = init_adapters(seed, (1, 2, 3, 4), width, DESK_T)
    for l in stack.layers:
        stack.params[l].W2.data[...] = rng.uniform(-1, 1, (DESK_T, width)) / np.sqrt(DESK_T)
    return stack


def test_criterion_1_gradient_suite(desk_backbone):
    rng = np.random.default_rng(5)
    img = render_trajectory(synth_subject(3, "impaired", SOURCE_TASK), fs_hz=200.0)
    stack = _desk_stack(1, desk_backbone.config.width, rng)
    E = np.linalg.qr(rng.standard_normal((DESK_T, 2)))[0]
    t0 = time.perf_counter()
    err = stack_grad_check(desk_backbone, stack, E, 1, desk_backbone.embed(img))
    secs = time.perf_counter() - t0
    verdict(1, err < GRAD_REL_TOL and secs < GRAD_SECONDS,
            f"max rel err {err:.2e} < {GRAD_REL_TOL:g}, {secs:.1f}s < {GRAD_SECONDS:g}s")


def test_criterion_2_algebraic_identities(desk_backbone):
    rng = np.random.default_rng(2)
    C = desk_backbone.config.width
    img = render_trajectory(synth_subject(4, "healthy", 2), fs_hz=200.0)
    plain = forward_with_hooks(desk_backbone, img)
    still = _desk_stack(3, C, rng)
    still.alpha = 0.0
    hooked = forward_with_hooks(desk_backbone, img, still)
    stream = all(np.array_equal(plain[l][0].data, hooked[l][0].data) for l in plain)

    X, Z = rng.standard_normal((65, C)), rng.standard_normal((65, DESK_T))
    p = _desk_stack(4, C, rng).params[2]
    p.Wz.data[...] = rng.standard_normal((DESK_T, DESK_T))
    p.W2.data[...] = 0.0
    w2_err = float(np.max(np.abs(adapter_forward(X, Z, p, alpha=0.1).X_out.data - 0.9 * X)))
    p.Wz.data[...] = 0.0
    out = adapter_forward(X, Z, p)
    wz_err = float(np.max(np.abs(out.M.data - out.M_prime.data)))
    verdict(2, stream and w2_err <= IDENTITY_TOL and wz_err <= IDENTITY_TOL,
            f"alpha=0 bit-exact {stream}, W2=0 err {w2_err:.1e}, Wz=0 err {wz_err:.1e}")


def test_criterion_3_oracle_equivalences():
    rng = np.random.default_rng(0)
    conv_err = 0.0
    for _ in range(ORACLE_CASES):
        n, t, k = int(rng.integers(1, 30)), int(rng.integers(1, 12)), int(rng.choice([1, 3, 5, 7]))
        x, w = rng.standard_normal((n, t)), rng.standard_normal((t, k))
        conv_err = max(conv_err, float(np.max(np.abs(kernels.dwconv1d_forward(x, w) - naive_conv(x, w)))))
    auc_err = 0.0
    for _ in range(ORACLE_CASES):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 3)))
        auc_err = max(auc_err, abs(roc_auc(scores, labels) - brute_auc(scores, labels)))
    proto = embed_prototypes(stub_encoder(11, 64), task_meta(1))
    e_nor, e_abn = scripted_prototypes(11, 64)
    proto_err = float(max(np.max(np.abs(proto.e_nor - e_nor)), np.max(np.abs(proto.e_abn - e_abn))))
    verdict(3, conv_err <= CONV_TOL and auc_err <= AUC_TOL and proto_err <= PROTO_TOL,
            f"conv {conv_err:.1e}, auc {auc_err:.1e}, prototypes {proto_err:.1e}")


def test_criterion_4_freeze_contract(desk_backbone):
    samples = synthetic_samples(desk_backbone, 3, 20, [SOURCE_TASK])
    E = embed_prototypes(stub_encoder(0, DESK_T), task_meta(SOURCE_TASK)).matrix
    before = desk_backbone.weight_hash()
    epochs = FREEZE_STEPS // len(samples[SOURCE_TASK])
    res = train(samples, SOURCE_TASK, TrainConfig(epochs=epochs, bottleneck=DESK_T), desk_backbone, E)
    after = desk_backbone.weight_hash()
    verdict(4, len(res.losses) == FREEZE_STEPS and before == after,
            f"{len(res.losses)} steps, hash {before[:12]} -> {after[:12]}")


def _matrix_run(backbone):
    cfg = TrainConfig(learning_rate=1e-4, epochs=20, bottleneck=DESK_T)
    t0 = time.perf_counter()
    samples = synthetic_samples(backbone, DATA_SEED, SUBJECTS, ALL_TASKS)
    run = run_matrix(backbone, samples, ALL_TASKS, ALL_TASKS, cfg, encoder="lexical")
    return run.matrix, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_synthetic_learnability(desk_backbone):
    first, secs = _matrix_run(desk_backbone)
    unseen = [first.cell(SOURCE_TASK, t) / 100 for t in UNSEEN]
    mean = float(np.mean(unseen))
    again, secs2 = _matrix_run(desk_backbone)
    same = matrix_csv(first).encode() == matrix_csv(again).encode()
    verdict(5, mean >= UNSEEN_AUC_MIN and secs < MATRIX_SECONDS and same,
            f"task {SOURCE_TASK} -> {UNSEEN} mean AUC {mean:.3f} >= {UNSEEN_AUC_MIN}, "
            f"25x25 in {secs:.0f}s / rerun {secs2:.0f}s < {MATRIX_SECONDS}s, byte-identical {same}")


# row means of the 25 x 25 transfer matrices (adapter method vs. the baseline)
ROW_MEAN_CLFA = [71.39, 71.18, 65.09, 56.49, 59.58, 73.89, 72.87, 72.15, 71.16, 71.94, 71.36, 74.39, 72.62,
                 72.34, 70.33, 70.90, 65.83, 72.33, 64.75, 71.74, 68.52, 69.58, 72.46, 67.86, 70.46]
ROW_MEAN_BASE = [70.97, 69.75, 58.75, 54.94, 58.57, 72.71, 71.40, 71.58, 68.25, 70.48, 65.70, 72.36, 71.86,
                 70.87, 70.18, 70.85, 65.19, 71.19, 61.15, 69.04, 64.48, 68.89, 71.17, 65.67, 69.02]


def test_criterion_6_analytics_replication():
    # one column of row means; target id 0 keeps every cell off the diagonal
    ours = AUCMatrix(np.array(ROW_MEAN_CLFA)[:, None], ALL_TASKS, (0,))
    base = AUCMatrix(np.array(ROW_MEAN_BASE)[:, None], ALL_TASKS, (0,))
    top = {s: d for s, _, d in top_k_improvements(diff_matrix(ours, base), 2)}
    d11, d3 = round(top.get(11, np.nan), 2), top.get(3, np.nan)
    # the prose quotes task 3 as 59.13 vs 52.80
    d3_text = round(59.13 - 52.80, 2)
    ok = d11 == 5.66 and abs(d3 - 6.34) <= DELTA_ROUNDING and abs(d3_text - 6.34) <= DELTA_ROUNDING
    verdict(6, ok, f"task 11 {d11:+.2f} (want +5.66), task 3 {d3:+.4f} / prose {d3_text:+.2f} (want +6.34)")


def _traj(x, y, fs=200.0):
    n = len(x)
    return RawTrajectory("s", 1, 0, np.arange(n) / fs, np.asarray(x, float), np.asarray(y, float),
                         np.full(n, 0.5), np.ones(n, bool))


def test_criterion_7_renderer_physics():
    fs = 200.0
    t = np.arange(400) / fs
    worst = 0.0
    for r in (1.0, 2.0, 3.0, 5.0):
        w = 2 * np.pi * 0.5
        kin = compute_kinematics(_traj(r * np.cos(w * t), r * np.sin(w * t)))
        worst = max(worst, abs(np.mean(kin.curvature[3:-3]) * r - 1))
    peak = dominant_frequency(1 + 0.2 * np.sin(2 * np.pi * 5 * t), fs)
    line = _traj(50 * t[:200], 20 * t[:200])
    img = rasterize(line, compute_kinematics(line), fs_hz=fs)
    stroke = img.max(axis=2) > 0
    rb = float(max(img[..., 0][stroke].max(), img[..., 2][stroke].max()))
    verdict(7, worst <= CURVATURE_REL and abs(peak - 5.0) <= FREQ_BIN_HZ and rb == 0.0 and stroke.any(),
            f"curvature rel err {worst:.2e}, tone peak {peak} Hz, max R/B on stroke {rb}")


def test_criterion_8_format_round_trips(desk_backbone, tmp_path):
    samples = synthetic_samples(desk_backbone, 5, 6, [2, 3])
    E = embed_prototypes(stub_encoder(0, DESK_T), task_meta(2)).matrix
    res = train(samples, 2, TrainConfig(epochs=1, bottleneck=DESK_T), desk_backbone, E)
    blob = save_checkpoint(res.stack, {"source_task": 2})
    stable = save_checkpoint(load_checkpoint(blob)) == blob

    rng = np.random.default_rng(8)
    m = AUCMatrix(rng.uniform(30, 100, (25, 25)), ALL_TASKS, ALL_TASKS)
    m.values[3, 7] = np.nan
    back = parse_matrix_csv(matrix_csv(m))
    finite = np.isfinite(m.values)
    quant = float(np.max(np.abs(back.values[finite] - m.values[finite])))
    same_nan = np.array_equal(np.isnan(back.values), ~finite)

    a = emit_report(m, tmp_path / "a")
    b = emit_report(m, tmp_path / "b")
    ppm = [p.read_bytes() for p in a + b if p.name == "heatmap.ppm"]
    deterministic = ppm[0] == ppm[1] and ppm[0].startswith(b"P6\n200 200\n255\n")
    verdict(8, stable and quant <= CSV_QUANTUM and same_nan and deterministic,
            f"checkpoint byte-stable {stable}, csv error {quant:.4f} <= {CSV_QUANTUM}, heatmap deterministic {deterministic}")
