"""Acceptance criteria 1-8. Each test prints one PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v``.
"""

import math
import time

import numpy as np
import pytest

from stavis import tensor as T
from stavis.audio import audio_forward, init_audio_params, segment_length
from stavis.config import GradcheckConfig, LossConfig, config_from_dict, load_config
from stavis.data.clips import VideoSource, flip_sample
from stavis.data.gt import densify_fixations
from stavis.data.inference import sliding_window_predict
from stavis.data.manifest import VideoManifest
from stavis.data.splits import make_splits
from stavis.data.synth import synth_dataset
from stavis.evaluate import evaluate_sources, mean_metrics
from stavis.gradsuite import run_suite
from stavis.localization import localize_bilinear, localize_cosine, localize_inner
from stavis.losses import LossWeights, loss_cc, loss_ce, loss_nss, saliency_loss
from stavis.metrics import metric_auc_judd, metric_cc, metric_nss, metric_sauc, metric_sim
from stavis.model import STAViS
from stavis.train import train_stage
from stavis.visual import init_visual_params, visual_forward

import oracles


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail

    return emit


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_gradient_suite(report):
    cfg = GradcheckConfig(seeds=20, h=1e-5, tol=1e-4)
    t0 = time.perf_counter()
    rows = run_suite(cfg)
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in rows if not r.passed]
    worst = max(r.max_rel_err for r in rows)
    ok = not failed and worst < 1e-4 and elapsed < 120 and any(r.name.startswith("end_to_end.av") for r in rows)
    report(1, "gradient suite", ok,
           f"{len(rows)} checks x {cfg.seeds} seeds, worst rel err {worst:.2e}, {elapsed:.0f}s"
           + (f", failed {failed}" if failed else ""))


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_reduction_identities(report):
    rng = np.random.default_rng(2)
    worst_diag, worst_ident, bitwise = 0.0, 0.0, 0
    for _ in range(100):
        d_h, n_out = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        grid = tuple(int(v) for v in rng.integers(2, 7, 2))
        h_v = rng.standard_normal((d_h,) + grid)
        h_a = rng.standard_normal((d_h,) + grid)
        s, beta = rng.standard_normal((n_out, d_h)), rng.standard_normal(n_out)
        l3 = localize_bilinear(h_v, h_a, np.stack([np.diag(r) for r in s]), beta).maps.data
        l2 = localize_inner(h_v, h_a, s, beta).maps.data
        bitwise += l3.tobytes() == l2.tobytes()
        worst_diag = max(worst_diag, float(np.abs(l3 - l2).max()))
        ident = localize_bilinear(h_v, h_a, np.eye(d_h)[None], [0.0]).maps.data
        norms = np.linalg.norm(h_v, axis=0) * np.linalg.norm(h_a, axis=0)
        worst_ident = max(worst_ident, float(np.abs(ident / norms - localize_cosine(h_v, h_a).maps.data).max()))
    ok = worst_diag < 1e-12 and worst_ident < 1e-9
    report(2, "reduction identities", ok,
           f"diagonal M vs inner max |d| {worst_diag:.1e} ({bitwise}/100 bitwise), "
           f"identity M / norms vs cosine max |d| {worst_ident:.1e}")


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_metric_oracles(report):
    rng = np.random.default_rng(3)
    worst = {m: 0.0 for m in ("cc", "nss", "sim", "auc_j", "auc_j_pairs", "sauc", "sauc_sweep")}
    for _ in range(100):
        p, y = rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))
        if rng.random() < 0.3:
            p = np.round(p * 4) / 4  # ties
        n_fix = int(rng.integers(1, 11))
        idx = rng.choice(256, n_fix + 30, replace=False)
        fix, other = np.zeros((16, 16)), np.zeros((16, 16))
        fix.flat[idx[:n_fix]] = 1
        other.flat[idx[n_fix:]] = 1
        pos, neg = p[fix > 0], p[other > 0]
        checks = {
            "cc": (metric_cc(p, y), oracles.pearson(p, y)),
            "nss": (metric_nss(p, fix), oracles.nss(p, fix)),
            "sim": (metric_sim(p, y), oracles.sim(p, y)),
            "auc_j": (metric_auc_judd(p, fix), oracles.auc_judd(p, fix)),
            "sauc": (metric_sauc(p, fix, other), oracles.sauc(p, fix, other)),
            "sauc_sweep": (metric_sauc(p, fix, other), oracles.roc_area_enumerated(pos, neg, list(pos) + list(neg))),
        }
        # with every pixel value as a threshold, the swept ROC area is the pairwise count
        all_neg = p[fix <= 0]
        checks["auc_j_pairs"] = (oracles.roc_area_enumerated(pos, all_neg, list(p.ravel())),
                                 oracles.pairwise_auc(pos, all_neg))
        for m, (a, b) in checks.items():
            worst[m] = max(worst[m], abs(a - b))
    ok = max(worst.values()) < 1e-6
    report(3, "metric oracles", ok, "max |d| " + ", ".join(f"{m} {v:.1e}" for m, v in worst.items()))


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_duality_and_weights(report):
    rng = np.random.default_rng(4)
    worst_dual, exact = 0.0, True
    for _ in range(100):
        p, y = rng.uniform(0.05, 0.95, (12, 12)), rng.uniform(0, 1, (12, 12))
        fix = np.zeros((12, 12))
        fix.flat[rng.choice(144, int(rng.integers(1, 11)), replace=False)] = 1
        worst_dual = max(worst_dual, abs(metric_cc(p, y) + loss_cc(p, y).item()),
                         abs(metric_nss(p, fix) + loss_nss(p, fix).item()))
        expected = 0.1 * loss_ce(p, y).item() + 2.0 * loss_cc(p, y).item() + 1.0 * loss_nss(p, fix).item()
        exact &= saliency_loss(p, fix, y).item() == expected
    w, c = LossWeights(), LossConfig()
    defaults = (w.ce, w.cc, w.nss) == (c.w1, c.w2, c.w3) == (0.1, 2.0, 1.0)
    ok = worst_dual < 1e-12 and exact and defaults
    report(4, "loss/metric duality and weights", ok,
           f"max |metric + loss| {worst_dual:.1e}, L_sal == 0.1 CE + 2 CC + 1 NSS exactly: {exact}, "
           f"default weights {(w.ce, w.cc, w.nss)}")


# -- 5 -------------------------------------------------------------------------

SYNTH = dict(size=32, amplitude=0.15, motion_hz=1.5)
STEPS = 300


def test_criterion_5_synthetic_audiovisual_advantage(report):
    t0 = time.perf_counter()
    base = {
        "backbone": {"height": 32, "width": 32},
        "localization": {"operator": "l3", "hidden_dim": 16, "n_out": 4},
        "fusion": {"scheme": "s3"},
        "optimizer": {"lr": 0.005},
        "train": {"batch_size": 8, "epochs": 500, "max_steps": STEPS, "patience": 1000},
    }
    cfg = config_from_dict(base)
    train = [VideoSource(v) for v in synth_dataset(1, 48, True, **SYNTH)]
    val = [VideoSource(v) for v in synth_dataset(2, 8, True, **SYNTH)]
    test = [VideoSource(v) for v in synth_dataset(3, 8, True, **SYNTH)]

    visual = STAViS(cfg.model, seed=0)
    r1 = train_stage(visual, "visual", train, val, cfg)
    vis = mean_metrics(evaluate_sources(visual, test))
    av = STAViS(cfg.model, seed=0)
    av.warm_start(visual.params)
    r2 = train_stage(av, "av", train, val, cfg)
    avm = mean_metrics(evaluate_sources(av, test))
    elapsed = time.perf_counter() - t0

    d_nss, d_cc = avm["nss"] - vis["nss"], avm["cc"] - vis["cc"]
    ok = d_nss >= 0.5 and d_cc >= 0.15 and r1.steps <= 500 and r2.steps <= 500 and elapsed < 900
    report(5, "synthetic audiovisual advantage", ok,
           f"visual NSS {vis['nss']:.3f} CC {vis['cc']:.3f}; AV NSS {avm['nss']:.3f} CC {avm['cc']:.3f}; "
           f"gain NSS {d_nss:+.3f} CC {d_cc:+.3f}; steps {r1.steps}+{r2.steps}; {elapsed:.0f}s")


# -- 6 -------------------------------------------------------------------------

GRID = [
    *[(op, {"scheme": "s1", "audio_only": True}, 1) for op in ("l1", "l2", "l3")],
    *[(op, {"scheme": "s1"}, 1) for op in ("l1", "l2", "l3")],
    *[(op, {"scheme": "s2"}, 1) for op in ("l1", "l2", "l3")],
    ("l3", {"scheme": "s2_multi"}, 4),
    ("l3", {"scheme": "s3"}, 4),
    ("l3", {"scheme": "late"}, 4),
]


def test_criterion_6_ablation_grid(report):
    t0 = time.perf_counter()
    train = [VideoSource(v) for v in synth_dataset(5, 8, True, size=32, n_frames=90)]
    probe = [VideoSource(v) for v in synth_dataset(6, 1, True, size=32, n_frames=20)]
    bad = []
    for op, fusion, n_out in GRID:
        name = f"{op}_{fusion['scheme']}" + ("_audio_only" if fusion.get("audio_only") else "")
        cfg = config_from_dict({
            "backbone": {"height": 32, "width": 32},
            "localization": {"operator": op, "hidden_dim": 16, "n_out": n_out},
            "fusion": fusion,
            "optimizer": {"lr": 0.005},
            "train": {"batch_size": 4, "epochs": 100, "max_steps": 50, "patience": 1000},
        })
        model = STAViS(cfg.model, seed=0)
        model.warm_start(STAViS(cfg.model, seed=1).params)
        try:
            result = train_stage(model, "av", train, [], cfg, restore_best=False)
        except Exception as exc:  # noqa: BLE001 - any failure is a grid failure
            bad.append(f"{name}: {type(exc).__name__}: {exc}")
            continue
        maps = np.stack([p.map for p in sliding_window_predict(model, probe[0], 8)])
        finite = all(math.isfinite(v) for v in result.losses())
        if result.steps != 50 or not finite or not np.isfinite(maps).all() or maps.min() < 0 or maps.max() > 1:
            bad.append(f"{name}: steps {result.steps}, finite loss {finite}, maps in [{maps.min():.3g}, {maps.max():.3g}]")
    ok = not bad
    report(6, "ablation grid", ok, f"{len(GRID) - len(bad)}/{len(GRID)} combinations x 50 steps, "
           f"{time.perf_counter() - t0:.0f}s" + (f"; {bad}" if bad else ""))


# -- 7 -------------------------------------------------------------------------


class _MeanPredictor:
    def predict(self, clips, audio):
        return clips.mean(axis=(1, 4))


def _video(n_frames, seed=0):
    rng = np.random.default_rng(seed)
    fix = [(f, v, float(rng.uniform(0, 15)), float(rng.uniform(0, 15))) for f in range(n_frames) for v in range(3)]
    return VideoManifest("v", "d", 25.0, n_frames, 16, 16, fix, frame_data=rng.uniform(0, 1, (n_frames, 16, 16, 3)),
                         audio_data=rng.uniform(-1, 1, int(n_frames * 8000 / 25)), sample_rate=8000)


def _tiny_training_bytes():
    cfg = config_from_dict({
        "backbone": {"channels": [2, 3, 3, 2], "height": 16, "width": 16, "dsam_hidden": 2,
                     "conv1_stride": [1, 1, 1], "block_strides": [[1, 1, 1], [1, 2, 2], [1, 1, 1]]},
        "audio": {"channels": [2, 2, 2, 2, 2, 2, 3]},
        "localization": {"hidden_dim": 3},
        "train": {"batch_size": 2, "epochs": 2, "max_steps": 4},
    })
    train = [VideoSource(v) for v in synth_dataset(1, 3, True, n_frames=40, size=16)]
    visual = STAViS(cfg.model, seed=0)
    train_stage(visual, "visual", train, [], cfg)
    av = STAViS(cfg.model, seed=0)
    av.warm_start(visual.params)
    train_stage(av, "av", train, [], cfg)
    return b"".join(av.params[n].data.tobytes() for n in sorted(av.params))


def test_criterion_7_pipeline_properties(report):
    problems = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        keys = [f"d{d}/v{i}" for d in range(3) for i in range(int(rng.integers(3, 15)))]
        spec = make_splits(keys, 3, seed=seed)
        try:
            spec.validate(keys)
        except ValueError as exc:
            problems.append(f"split seed {seed}: {exc}")
        for fold in spec.folds:
            if set(fold.train) | set(fold.val) | set(fold.test) != set(keys):
                problems.append(f"split seed {seed}: fold does not cover every video")

    src = VideoSource(_video(40))
    for start in (0, 11, 24):
        s = src.sample(start)
        back = flip_sample(flip_sample(s))
        if back.clip.tobytes() != s.clip.tobytes() or back.gt.y_den.tobytes() != s.gt.y_den.tobytes() \
                or back.gt.y_fix.tobytes() != s.gt.y_fix.tobytes():
            problems.append(f"flip is not an involution at {start}")

    for n in (1, 15, 16, 17, 100):
        preds = sliding_window_predict(_MeanPredictor(), VideoSource(_video(n)), batch_size=8)
        if [p.frame_idx for p in preds] != list(range(n)):
            problems.append(f"sliding window on {n} frames gave {len(preds)} maps")

    rng = np.random.default_rng(7)
    for _ in range(50):
        fix = np.zeros((20, 24))
        fix.flat[rng.choice(480, int(rng.integers(1, 10)), replace=False)] = 1
        peak = densify_fixations(fix, float(rng.uniform(0.5, 4))).max()
        if peak != 1.0:
            problems.append(f"densified peak {peak!r}")

    reproducible = _tiny_training_bytes() == _tiny_training_bytes()
    if not reproducible:
        problems.append("two fixed-seed training runs differ")
    report(7, "pipeline properties", not problems,
           "splits over 50 seeds, flip involution, window counts for F in {1,15,16,17,100}, "
           f"densify peak == 1, bit-identical training: {reproducible}" + (f"; {problems}" if problems else ""))


# -- 8 -------------------------------------------------------------------------


def _out(n, k, s, p=0):
    return (n + 2 * p - k) // s + 1


def test_criterion_8_full_scale_shapes(report):
    t0 = time.perf_counter()
    cfg = load_config("paper_shape").model
    b, a = cfg.backbone, cfg.audio
    dims = [b.frames, b.height, b.width]
    dims = [_out(n, k, s, k // 2) for n, k, s in zip(dims, b.conv1_kernel, b.conv1_stride)]
    dims = [_out(n, k, s) for n, k, s in zip(dims, b.pool_window, b.pool_stride)]
    for strides in b.block_strides[:2]:  # X^1 is conv1; X^2 and X^3 follow one block each
        dims = [_out(n, k, s, k // 2) for n, k, s in zip(dims, b.block_kernel, strides)]
    expected_x3 = (b.channels[2], *dims)

    clip = np.random.default_rng(8).uniform(size=(b.frames, b.height, b.width, 3))
    params = init_visual_params(b, np.random.default_rng(0))
    with T.no_grad():
        out = visual_forward(clip, params, b)
    x3 = tuple(out.features[2].shape[1:])
    maps_ok = out.logits.shape == (1, b.height, b.width)

    audio_params = init_audio_params(a, np.random.default_rng(1))
    nominal = segment_length(22050, 25.0)
    lengths = {}
    for scale in (0.5, 0.75, 1.0, 1.5, 2.0):
        wave = np.random.default_rng(2).uniform(-1, 1, int(nominal * scale))
        with T.no_grad():
            lengths[scale] = audio_forward(wave, audio_params, a).shape
    fixed = set(lengths.values()) == {(a.out_dim,)}
    elapsed = time.perf_counter() - t0
    ok = x3 == expected_x3 and maps_ok and fixed and (b.frames, b.height, b.width) == (16, 112, 112) and elapsed < 60
    report(8, "paper-shape conformance", ok,
           f"X3 {x3} (stride arithmetic {expected_x3}), f_a {sorted(set(lengths.values()))} for 0.5x-2x of "
           f"{nominal} samples, {elapsed:.0f}s")
