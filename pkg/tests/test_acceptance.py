"""Acceptance battery: one test per criterion, printed pass/fail lines.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Tolerances are pinned here and nowhere else.
"""

import json
import time

import numpy as np
import pytest

from ibex.cli import main as cli_main
from ibex.dissect import Detectors, compute_iou_table, assign_labels, \
    quantile_thresholds, validation_scores
from ibex.losses import (
    ClassifierParams,
    LossWeights,
    PartitionConfig,
    StandardizationState,
    backward,
    forward,
    inactive_classifier_loss,
    max_activation_loss,
    max_margin_loss,
    partition_sizes,
    partition_thresholds,
    sparsity_loss,
    total_loss_and_grads,
)
from ibex.metrics import score1, score2
from ibex.orthobasis import basis_from_params, n_params, orthonormality_defect
from ibex.synth import SynthConfig, generate, match_basis
from ibex.tammes import solve_min_angle
from ibex.tensorstore import iterate_pixel_batches
from ibex.trainer import AdamState, TrainConfig, adam_step, train_basis

from test_dissect import iou_oracle
from test_metrics import grid_score1, grid_score2


def report(name, ok, t0, detail=""):
    state = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {state} ({time.monotonic() - t0:.1f}s) {detail}")


# ------------------------------------------------------------ gradient suite


def _loss_grads(name, x, theta, params, std, nu, gamma):
    """Analytic (g_theta, g_b, g_t) of one loss term with frozen stats."""
    dim = x.shape[1]
    w = basis_from_params(theta, dim)
    act = forward(x, w, params, std, batch_stats=False)
    if name == "margin":
        _, g_t = max_margin_loss(params.t)
        return np.zeros_like(theta), 0.0, g_t
    if name == "sparsity":
        _, dl_dy = sparsity_loss(act)
    elif name == "max_activation":
        _, dl_dy = max_activation_loss(act)
    else:
        _, dl_dy = inactive_classifier_loss(act, nu, gamma)
    dl_dw, g_b, g_t = backward(act, dl_dy)
    from ibex.orthobasis import grad_pullback

    return grad_pullback(dl_dw, theta, dim), g_b, g_t


def _loss_value(name, x, theta, params, std, nu, gamma):
    dim = x.shape[1]
    if name == "margin":
        return max_margin_loss(params.t)[0]
    if name == "total":
        return total_loss_and_grads(x, theta, params, std, nu, gamma,
                                    batch_stats=False).total
    act = forward(x, basis_from_params(theta, dim), params, std,
                  batch_stats=False)
    if name == "sparsity":
        return sparsity_loss(act)[0]
    if name == "max_activation":
        return max_activation_loss(act)[0]
    return inactive_classifier_loss(act, nu, gamma)[0]


def _fd_grads(name, x, theta, params, std, nu, gamma, h=1e-6):
    def f(tv, bv, tt):
        return _loss_value(name, x, tv,
                           ClassifierParams(bv, tt, params.weights),
                           std, nu, gamma)

    g_theta = np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        g_theta[k] = (f(theta + e, params.bias, params.t)
                      - f(theta - e, params.bias, params.t)) / (2 * h)
    g_b = (f(theta, params.bias + h, params.t)
           - f(theta, params.bias - h, params.t)) / (2 * h)
    g_t = (f(theta, params.bias, params.t + h)
           - f(theta, params.bias, params.t - h)) / (2 * h)
    return g_theta, g_b, g_t


def _max_rel_err(analytic, fd):
    a = np.concatenate([np.atleast_1d(np.asarray(g, dtype=np.float64)).ravel()
                        for g in analytic])
    b = np.concatenate([np.atleast_1d(np.asarray(g, dtype=np.float64)).ravel()
                        for g in fd])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-10))


def test_criterion_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    while checked < 50:
        dim = int(rng.choice([4, 8, 16]))
        batch = int(rng.choice([4, 32]))
        x = rng.normal(size=(batch, dim)) * rng.uniform(0.5, 2.0)
        theta = rng.normal(size=n_params(dim)) * 0.4
        std = StandardizationState.create(dim)
        std.mean = rng.normal(size=dim) * 0.3
        std.var = rng.uniform(0.5, 2.0, dim)
        std.initialized = True
        nu = partition_thresholds(dim, PartitionConfig(tau=float(rng.uniform(0.3, 0.9))))
        gamma = 2.5
        params = ClassifierParams(float(rng.uniform(-0.2, 0.7)),
                                  float(rng.uniform(0.3, 1.0)), LossWeights())
        # keep the inactive loss away from its ReLU kink so central
        # differences stay two-sided
        act = forward(x, basis_from_params(theta, dim), params, std,
                      batch_stats=False)
        u = (act.y ** gamma).mean(axis=0)
        if np.min(np.abs(nu - u)) < 1e-4:
            continue
        checked += 1
        for name in ("sparsity", "max_activation", "inactive", "margin"):
            analytic = _loss_grads(name, x, theta, params, std, nu, gamma)
            fd = _fd_grads(name, x, theta, params, std, nu, gamma)
            worst = max(worst, _max_rel_err(analytic, fd))
        res = total_loss_and_grads(x, theta, params, std, nu, gamma,
                                   batch_stats=False)
        fd = _fd_grads("total", x, theta, params, std, nu, gamma)
        worst = max(worst, _max_rel_err(
            (res.grad_theta, res.grad_bias, res.grad_t), fd))
    elapsed = time.monotonic() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    report("gradient-suite", ok, t0, f"max rel err {worst:.2e}")
    assert worst < 1e-5
    assert elapsed < 60.0


# -------------------------------------------------------------- orthogonality


def test_criterion_orthogonality(tmp_path):
    t0 = time.monotonic()
    cfg = SynthConfig(dim=16, group_sizes=(4, 3), n_images=20, height=4,
                      width=4)
    feature_ds, _, _ = generate(cfg, tmp_path)
    train_ds = feature_ds.subset("train")
    nu = partition_thresholds(16, PartitionConfig())
    theta = np.zeros(n_params(16))
    bias, t = np.array(0.5), np.array(0.5)
    std = StandardizationState.create(16)
    adam = AdamState([theta, bias, t])
    seeds = np.random.SeedSequence(0).generate_state(50)
    worst_defect = 0.0
    for epoch in range(50):
        for batch in iterate_pixel_batches(train_ds, 128, int(seeds[epoch])):
            res = total_loss_and_grads(
                batch.astype(np.float64), theta,
                ClassifierParams(float(bias), float(t)), std, nu, 2.5,
            )
            theta, bias, t = adam_step(
                adam, [theta, bias, t],
                [res.grad_theta, np.array(res.grad_bias),
                 np.array(res.grad_t)], 0.001,
            )
            worst_defect = max(
                worst_defect, orthonormality_defect(basis_from_params(theta, 16))
            )
    rng = np.random.default_rng(7)
    worst_cayley = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 65))
        w = basis_from_params(rng.standard_normal(n_params(dim)), dim)
        worst_cayley = max(worst_cayley, orthonormality_defect(w))
    elapsed = time.monotonic() - t0
    ok = worst_defect < 1e-10 and worst_cayley < 1e-10 and elapsed < 30.0
    report("orthogonality", ok, t0,
           f"train defect {worst_defect:.1e}, cayley defect {worst_cayley:.1e}")
    assert worst_defect < 1e-10
    assert worst_cayley < 1e-10
    assert elapsed < 30.0


# ----------------------------------------------------------- threshold budget


def test_criterion_threshold_budget():
    t0 = time.monotonic()
    rng = np.random.default_rng(99)
    worst = 0.0
    configs = []
    for tau in (0.3, 0.5, 0.7, 0.9):  # ablation grids
        for n in (1, 2, 4):
            configs.append(
                (PartitionConfig(count=n, alpha=(1.0 / n,) * n,
                                 omega=tuple(float(m + 1) for m in range(n)),
                                 tau=tau),
                 int(rng.integers(n, 512))))
    while len(configs) < 200:
        n = int(rng.integers(1, 6))
        raw = np.sort(rng.uniform(0.05, 1.0, n))[::-1]
        cfg = PartitionConfig(
            count=n,
            alpha=tuple(raw / raw.sum()),
            omega=tuple(rng.uniform(0.1, 4.0, n)),
            tau=float(rng.uniform(0.0, 1.0)),
        )
        configs.append((cfg, int(rng.integers(n, 1024))))
    for cfg, n_det in configs:
        sizes = partition_sizes(n_det, cfg)
        assert sizes.sum() == n_det
        nu = partition_thresholds(n_det, cfg)
        worst = max(worst, abs(float(nu.sum()) - cfg.tau))
    ok = worst < 1e-12
    report("threshold-budget", ok, t0,
           f"{len(configs)} configs, worst |sum(nu) - tau| = {worst:.1e}")
    assert worst < 1e-12


# ----------------------------------------------------------- metric identities


def test_criterion_metric_identities():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 20))
        # scores on the 1e-4 lattice: the 1e4-point midpoint rule is exact
        # there, so the grid oracle checks the closed forms themselves
        scores = rng.integers(0, 10_001, size=n) / 10_000.0
        labels = rng.integers(0, 6, size=n).tolist()
        s1, s2 = score1(scores), score2(scores, labels)
        worst = max(worst, abs(s1 - grid_score1(scores)))
        worst = max(worst, abs(s2 - grid_score2(scores, labels)))
        assert s2 <= s1 + 1e-12
        assert abs(s1 - scores.sum()) < 1e-12
    ok = worst < 1e-4
    report("metric-identities", ok, t0, f"worst grid deviation {worst:.2e}")
    assert worst < 1e-4


# ----------------------------------------------------------------- IoU oracle


def test_criterion_iou_oracle(tmp_path):
    t0 = time.monotonic()
    from conftest import write_concept_manifest, write_feature_manifest
    from ibex.tensorstore import load_concept_dataset, load_feature_dataset
    from ibex.dissect import binarized_map

    rng = np.random.default_rng(17)
    n_det, n_con, side, dim = 5, 4, 6, 3
    w = rng.normal(size=(n_det, dim))
    b = rng.normal(size=n_det) * 0.2
    feats, det_maps, masks = {}, {}, {}
    for k in range(3):
        iid = f"img{k}"
        f = rng.normal(size=(side, side, dim)).astype(np.float32)
        feats[iid] = f
        det_maps[iid] = np.stack(
            [binarized_map(f, w[i], b[i]) for i in range(n_det)]
        )
        masks[iid] = (rng.uniform(size=(n_con, side, side)) > 0.55).astype(
            np.float32
        )
    fpath = write_feature_manifest(
        tmp_path, [(iid, feats[iid], "train") for iid in sorted(feats)], dim
    )
    mask_entries = [(iid, c, masks[iid][c]) for iid in sorted(masks)
                    for c in range(n_con)]
    cpath = write_concept_manifest(
        tmp_path, [(c, f"c{c}", "x") for c in range(n_con)], mask_entries,
        {iid: (side, side) for iid in feats},
    )
    fds = load_feature_dataset(fpath)
    cds = load_concept_dataset(cpath, fds)
    table = compute_iou_table(Detectors(w, b), fds, cds, "train")
    oracle = iou_oracle(det_maps, masks)
    exact = np.array_equal(table.phi, oracle)
    report("iou-oracle", exact, t0)
    assert exact


# --------------------------------------------------- end-to-end synthetic run


def test_criterion_end_to_end_synthetic(tmp_path):
    t0 = time.monotonic()
    cfg = SynthConfig(dim=16, group_sizes=(4, 3), n_images=200, height=8,
                      width=8, noise_sigma=0.05)
    feature_ds, concept_ds, truth = generate(cfg, tmp_path)
    train_cfg = TrainConfig(
        epochs=300, learning_rate=0.001, batch_size=1024, seed=0,
        weights=LossWeights(2.0, 5.0, 5.0, 0.5),
        partition=PartitionConfig(count=1, alpha=(1.0,), omega=(1.0,),
                                  tau=0.7, gamma=2.5),
        init_bias=0.5, init_t=0.5,
    )
    model = train_basis(feature_ds, train_cfg)
    match = match_basis(model.detector_rows(), truth)

    w, b_i, _ = model.raw_classifiers()
    det_learned = Detectors(w, b_i)
    labeled = assign_labels(
        compute_iou_table(det_learned, feature_ds, concept_ds, "train")
    )
    val = validation_scores(det_learned, labeled, feature_ds, concept_ds, "val")
    s1_learned = score1(val)

    eye = np.eye(feature_ds.layer_dim)
    det_base = Detectors.natural(
        feature_ds.layer_dim,
        quantile_thresholds(feature_ds.subset("train"), eye, 0.005),
    )
    labeled_base = assign_labels(
        compute_iou_table(det_base, feature_ds, concept_ds, "train")
    )
    val_base = validation_scores(det_base, labeled_base, feature_ds,
                                 concept_ds, "val")
    s1_base = score1(val_base)

    elapsed = time.monotonic() - t0
    recovered = match.min_cosine > 0.95
    improved = s1_learned >= 1.2 * s1_base
    ok = recovered and improved and elapsed < 600.0
    report(
        "end-to-end-synthetic", ok, t0,
        f"min|cos| {match.min_cosine:.3f} (need > 0.95), "
        f"score1 {s1_learned:.3f} vs baseline {s1_base:.3f}",
    )
    assert elapsed < 600.0
    assert improved, (
        f"learned score1 {s1_learned:.4f} < 1.2 x baseline {s1_base:.4f}"
    )
    assert recovered, (
        f"matched |cosines| {np.round(match.cosines, 3).tolist()}; the "
        f"minimum {match.min_cosine:.3f} does not reach 0.95"
    )


# -------------------------------------------------------------------- tammes


def test_criterion_tammes():
    t0 = time.monotonic()
    r2 = solve_min_angle(2, 3, seed=0, iterations=600, restarts=3)
    r3 = solve_min_angle(3, 2, seed=0, iterations=1200, restarts=5)
    r4 = solve_min_angle(4, 3, seed=0, iterations=1200, restarts=5)
    r64 = solve_min_angle(64, 64, seed=0, iterations=800, restarts=5)
    elapsed = time.monotonic() - t0
    checks = [
        abs(r2.stats.min - 180.0) < 0.1,
        abs(r3.stats.min - 120.0) < 0.5,
        abs(r4.stats.min - 109.47) < 0.5,
        85.0 <= r64.stats.mean <= 95.0,
        elapsed < 120.0,
    ]
    report(
        "tammes", all(checks), t0,
        f"I2 {r2.stats.min:.2f}, I3D2 {r3.stats.min:.2f}, "
        f"I4D3 {r4.stats.min:.2f}, I64 mean {r64.stats.mean:.2f}",
    )
    assert all(checks)


# --------------------------------------------------------------- determinism


def test_criterion_determinism(tmp_path):
    t0 = time.monotonic()
    synth_cfg = {
        "synth": {"dim": 8, "group_sizes": [2, 2], "n_images": 12,
                  "height": 4, "width": 4, "rotation_seed": 1, "data_seed": 2},
        "out": "data",
    }
    (tmp_path / "synth.json").write_text(json.dumps(synth_cfg))
    assert cli_main(["synth", "--config", str(tmp_path / "synth.json")]) == 0
    train_doc = {
        "features": "data/features.json",
        "train": {"epochs": 3, "batch_size": 32, "seed": 0},
    }
    bundles = []
    for run in ("one", "two"):
        doc = {**train_doc, "out": f"run_{run}"}
        cfg_path = tmp_path / f"train_{run}.json"
        cfg_path.write_text(json.dumps(doc))
        assert cli_main(
            ["train", "--config", str(cfg_path), "--deterministic"]
        ) == 0
        bundles.append(tmp_path / f"run_{run}" / "model")
    identical = all(
        (bundles[0] / name).read_bytes() == (bundles[1] / name).read_bytes()
        for name in ["model.json", "theta.uibf", "mu.uibf", "var.uibf",
                     "history.csv"]
    )
    report("determinism", identical, t0)
    assert identical
