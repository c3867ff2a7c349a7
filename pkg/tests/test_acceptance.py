"""Acceptance criteria, one test per criterion; each records a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

import gradcases
import oracles
from conftest import ACCEPTANCE_LINES
from ulhm.cli import main
from ulhm.metrics import BettiConfig, SlicedW2Config, betti0, continuity, estimate_bilipschitz, purity, sliced_w2, trust_rank
from ulhm.neighbors import knn, mst_edges, pairwise_distances, rank_matrix
from ulhm.verifier import FailureMode, MetricBundle, Thresholds, VerifierFlags, verify

SEED = 42


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --------------------------------------------------------------------------- 1. reference rows

# (beta0, W2, trust, continuity, alignment) per sparsity level 0.10, 0.15, 0.20, 0.25
MNIST_ROWS = [
    (1, 0.014, 0.800, 0.906, 0.027),
    (1, 0.019, 0.902, 0.899, 0.030),
    (1, 0.024, 0.937, 0.890, 0.034),
    (1, 0.027, 0.953, 0.882, 0.038),
]
JOINT_ROWS = [
    (1, 0.016, 0.860, 0.782, 0.288),
    (1, 0.016, 0.920, 0.779, 0.236),
    (1, 0.018, 0.940, 0.770, 0.218),
    (1, 0.021, 0.949, 0.769, 0.203),
]
FLAGS_ON = VerifierFlags(has_paired_modalities=True, requires_clustering=True)


def _bundle(row):
    b0, w2, trust, cont, align = row
    return MetricBundle(["obs", "sparse"], betti0=b0, w2=np.array([[0.0, w2], [w2, 0.0]]),
                        trust={"obs": trust, "sparse": trust}, continuity={"obs": cont, "sparse": cont},
                        alignment=align)


def test_criterion_1_reference_rows():
    t0 = time.perf_counter()
    verdicts = [verify(_bundle(r), Thresholds(), FLAGS_ON) for r in MNIST_ROWS + JOINT_ROWS]
    strict = verify(_bundle(MNIST_ROWS[0]), Thresholds(tau_t=0.99), FLAGS_ON)
    elapsed = time.perf_counter() - t0
    ok = (all(v.passed for v in verdicts)
          and strict.failure_mode is FailureMode.LOCAL_MANIFOLD_COLLAPSE
          and elapsed < 1.0)
    record("1", ok, f"{sum(v.passed for v in verdicts)}/8 rows PASS; tau_t=0.99 -> "
                    f"{strict.outcome}({strict.failure_mode.value if strict.failure_mode else '-'}); {elapsed:.3f}s")


# --------------------------------------------------------------------------- 2. metric oracles


def test_criterion_2_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for inst in range(100):
        k = (2, 3, 5)[inst % 3]
        n = int(rng.integers(2 * k + 2, 65))
        x = rng.standard_normal((n, int(rng.integers(2, 6))))
        z = np.tanh(x[:, :2] @ rng.standard_normal((2, 3))) + 0.1 * rng.standard_normal((n, 3))
        labels = rng.integers(0, 3, n)
        Dx, Dz = pairwise_distances(x).values, pairwise_distances(z).values
        got = (
            continuity(rank_matrix(Dx), knn(Dz, k)),
            trust_rank(rank_matrix(Dz), knn(Dx, k)),
            purity(knn(Dz, k), labels)[1],
        )
        ref = (oracles.continuity(Dx, Dz, k), oracles.trust(Dx, Dz, k), oracles.purity(Dz, labels, k))
        worst = max(worst, *(abs(a - b) for a, b in zip(got, ref)))
    rank_ok = worst <= 1e-12

    mismatches = 0
    for inst in range(100):
        n = int(rng.integers(1, 201))
        n_blobs = int(rng.integers(1, 6))
        centers = rng.uniform(-10, 10, (n_blobs, 2))
        x = centers[rng.integers(0, n_blobs, n)] + rng.standard_normal((n, 2))
        D = pairwise_distances(x).values if n > 1 else np.zeros((1, 1))
        mst = mst_edges(D)
        for eps in rng.uniform(1e-3, max(D.max(), 1e-2) * 1.1, 20):
            if betti0(mst, BettiConfig(epsilon=float(eps)))[0] != oracles.components(D, eps):
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = rank_ok and mismatches == 0 and elapsed < 30.0
    record("2", ok, f"rank metrics max |diff| {worst:.2e} over 100 instances; beta0 mismatches "
                    f"{mismatches}/2000; {elapsed:.1f}s")


# --------------------------------------------------------------------------- 3. sliced W2


def test_criterion_3_sliced_w2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    cloud = rng.standard_normal((2000, 4))
    self_zero = sliced_w2(cloud, cloud.copy(), SlicedW2Config(512, SEED)) == 0.0
    dirac_exact = all(
        sliced_w2(np.array([[0.0]]), np.array([[t]]), SlicedW2Config(L, SEED)) == abs(t)
        for t in rng.uniform(-50, 50, 20) for L in (1, 16, 512)
    )
    shift = rng.standard_normal(4)
    est = sliced_w2(cloud, cloud + shift, SlicedW2Config(512, SEED))
    # the shifted copy's projections move by exactly t.theta, so each 1-D W2^2 is (t.theta)^2
    theta = np.random.default_rng(SEED + 1).standard_normal((100_000, 4))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    ref = math.sqrt(float(np.mean((theta @ shift) ** 2)))
    rel = abs(est - ref) / ref
    elapsed = time.perf_counter() - t0
    ok = self_zero and dirac_exact and rel < 0.05 and elapsed < 60.0
    record("3", ok, f"self=0 {self_zero}; 1-D Dirac exact {dirac_exact}; shifted cloud {est:.4f} vs "
                    f"Monte-Carlo {ref:.4f} (rel {rel:.2%}, analytic {np.linalg.norm(shift) / 2:.4f}); {elapsed:.1f}s")


# --------------------------------------------------------------------------- 4. gradients


def test_criterion_4_gradient_suite():
    t0 = time.perf_counter()
    worst = {}
    for name, build in gradcases.CASES.items():
        errs = []
        for seed in range(20):
            f, x, analytic = build(seed)
            errs.append(oracles.rel_err(analytic, oracles.numeric_grad(f, x, 1e-6)))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 120.0
    top = max(worst, key=worst.get)
    record("4", ok, f"{len(worst)} losses x 20 seeds; worst rel err {worst[top]:.1e} ({top}); {elapsed:.1f}s")


# --------------------------------------------------------------------------- 5. bi-Lipschitz

EPS_BL = 0.1  # tolerance on the tight side, same 10% as the loose side


def _orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _bilipschitz_case(A, rng):
    x = rng.standard_normal((500, 8))
    bl = estimate_bilipschitz(pairwise_distances(x), pairwise_distances(x @ A.T))
    s = np.linalg.svd(A, compute_uv=False)
    smin, smax = float(s[-1]), float(s[0])
    ok = (0.9 * smin <= bl.c1 <= smin * (1.0 + EPS_BL) and smax * (1.0 - EPS_BL) <= bl.c2 <= 1.1 * smax
          and bl.c1 >= smin * (1 - 1e-12) and bl.c2 <= smax * (1 + 1e-12))
    return ok, bl.c1 / smin, bl.c2 / smax


def test_criterion_5_bilipschitz():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    results = []
    for _ in range(5):
        # random map with singular values drawn from [0.5, 1.5] between random rotations
        A = _orthogonal(rng, 8) @ np.diag(rng.uniform(0.5, 1.5, 8)) @ _orthogonal(rng, 8)
        results.append(_bilipschitz_case(A, rng))
    x = rng.standard_normal((500, 8))
    D = pairwise_distances(x)
    ident = tuple(estimate_bilipschitz(D, D)[:2])
    scaled = tuple(estimate_bilipschitz(D, pairwise_distances(2.0 * x))[:2])
    elapsed = time.perf_counter() - t0
    ok = all(r[0] for r in results) and ident == (1.0, 1.0) and scaled == (2.0, 2.0) and elapsed < 30.0
    record("5", ok, f"{sum(r[0] for r in results)}/5 maps in bounds (c1/smin <= {max(r[1] for r in results):.3f}, "
                    f"c2/smax >= {min(r[2] for r in results):.3f}); identity {ident}; 2x {scaled}; {elapsed:.1f}s")


@pytest.mark.xfail(strict=True, reason="sampled pair ratios cannot approach sigma_min of an ill-conditioned "
                                       "Gaussian matrix in d=8 with N=500")
def test_bilipschitz_gaussian_matrices_within_tolerance():
    rng = np.random.default_rng(SEED)
    ratios = []
    for _ in range(5):
        A = rng.standard_normal((8, 8))
        ok, r1, _ = _bilipschitz_case(A, rng)
        ratios.append(r1)
    print(f"Gaussian matrices: c1/sigma_min = {[round(r, 3) for r in ratios]}")
    assert max(ratios) <= 1.0 + EPS_BL


# --------------------------------------------------------------------------- 6-8. pipeline


def _cli(argv):
    code = main([str(a) for a in argv])
    assert code in (0, 1), f"cli exited {code} for {argv}"
    return code


def _pipeline(root):
    """Train and evaluate every task at seed 42; returns the report paths."""
    t = {}
    start = time.perf_counter()
    _cli(["train", "--task", "transfer", "--seed", SEED, "--out", root / "transfer"])
    _cli(["eval", "transfer", "--run", root / "transfer", "--out", root / "transfer_report.json"])
    _cli(["train", "--task", "zeroshot", "--seed", SEED, "--out", root / "zeroshot"])
    _cli(["eval", "zeroshot", "--run", root / "zeroshot", "--out", root / "zeroshot_report.json"])
    _cli(["train", "--task", "zeroshot", "--seed", SEED, "--lambda-l", "0", "--out", root / "ablation"])
    _cli(["eval", "zeroshot", "--run", root / "ablation", "--out", root / "ablation_report.json"])
    t["6"] = time.perf_counter() - start
    start = time.perf_counter()
    _cli(["train", "--task", "recover", "--seed", SEED, "--out", root / "recover"])
    _cli(["eval", "recover", "--run", root / "recover", "--out", root / "recover_report.json"])
    t["7"] = time.perf_counter() - start
    return t


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    roots = [tmp_path_factory.mktemp(f"pipeline{k}") for k in (1, 2)]
    times = [_pipeline(r) for r in roots]
    return roots, times


def _load(root, name):
    return json.loads((root / f"{name}_report.json").read_text())


def test_criterion_6_end_to_end(pipeline_runs):
    (root, _), (times, _) = pipeline_runs
    tr, zs, ab = _load(root, "transfer"), _load(root, "zeroshot"), _load(root, "ablation")
    ver = tr["verification"]
    trust = min(ver["metrics"]["trust"].values())
    w2 = np.asarray(ver["metrics"]["w2"])
    w2_max = float(w2[np.triu_indices(w2.shape[0], 1)].max())
    acc = tr["accuracy"]
    gap = 100.0 * (zs["accuracy"] - ab["accuracy"])
    parts = {
        "a": ver["verdict"] == "PASS" and trust >= 0.80 and w2_max <= 0.30,
        "b": all(v >= 0.90 for v in acc.values()) and len(acc) == 2,
        "c": zs["accuracy"] >= 0.90 and len(zs["unseen"]) == 2,
        "d": gap >= 5.0,
    }
    ok = all(parts.values()) and times["6"] < 600.0
    record("6", ok, f"(a) {ver['verdict']} trust {trust:.3f} W2 {w2_max:.3f}; (b) "
                    + ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
                    + f"; (c) ZSL {zs['accuracy']:.3f}; (d) lambda_l=0 ZSL {ab['accuracy']:.3f}, gap {gap:.1f} pts; "
                    f"{times['6']:.0f}s")


def test_criterion_7_sparse_recovery(pipeline_runs):
    (root, _), (times, _) = pipeline_runs
    rep = _load(root, "recover")
    mse = rep["mse_by_rho"]
    keys = ["0.25", "0.5", "0.75", "1.0"]
    values = [mse[k] for k in keys]
    monotone = all(a >= b for a, b in zip(values, values[1:]))
    exact = mse["1.0"] == rep["autoencode_mse"]
    ok = list(mse) == keys and monotone and exact and times["7"] < 300.0
    record("7", ok, "MSE by rho " + ", ".join(f"{k}: {v:.4f}" for k, v in zip(keys, values))
                    + f"; rho=1 equals autoencoding {exact}; {times['7']:.0f}s")


def test_criterion_8_determinism(pipeline_runs):
    (a, b), _ = pipeline_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differing = [str(rel) for rel in files if (a / rel).read_bytes() != (b / rel).read_bytes()]
    reports = [p for p in files if p.name.endswith("_report.json")]
    ok = not differing and len(reports) == 4
    record("8", ok, f"{len(files)} files ({len(reports)} reports, checkpoints, histories) byte-identical across "
                    f"two runs" + (f"; differing: {differing[:5]}" if differing else ""))
