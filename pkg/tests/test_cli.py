import json
import subprocess
import sys

import numpy as np
import pytest

from ulhm import pipeline
from ulhm.cli import main
from ulhm.store import EmbeddingSet, save_embeddings
from ulhm.toy.training import transfer_skeleton

TABLE2_ROW = {
    "domains": ["a", "b"],
    "betti0": 1,
    "w2": [[0.0, 0.014], [0.014, 0.0]],
    "trust": {"a": 0.800, "b": 0.800},
    "continuity": {"a": 0.906, "b": 0.906},
    "alignment": 0.027,
}


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _manifest(tmp_path, offset=0.0, pairs=False):
    rng = np.random.default_rng(0)
    entries = []
    for k, tag in enumerate(("a", "b")):
        x = rng.standard_normal((40, 6))
        z = x[:, :3] + (offset if k else 0.0) + 3.0
        save_embeddings(EmbeddingSet(z, rng.integers(0, 3, 40)), tmp_path / f"{tag}.csv")
        save_embeddings(EmbeddingSet(x), tmp_path / f"{tag}_in.bin")
        entries.append({"tag": tag, "embeddings_path": f"{tag}.csv", "input_path": f"{tag}_in.bin"})
    if pairs:
        entries[0]["pairs_with"] = "b"
    doc = {"domains": entries, "flags": {"has_paired_modalities": pairs, "requires_clustering": True}}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_metrics_report_schema(tmp_path, capsys):
    code, out, _ = _run(["metrics", "--manifest", _manifest(tmp_path)], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["schema_version"] == 1
    assert set(doc["metrics"]) >= {"domains", "betti0", "epsilon_used", "w2", "trust", "continuity", "purity"}
    assert doc["metrics"]["domains"] == ["a", "b"]
    assert "verdict" not in doc


def test_missing_manifest_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    code, _, err = _run(["metrics", "--manifest", missing], capsys)
    assert code == 2 and str(missing) in err


def test_missing_embedding_file_named(tmp_path, capsys):
    path = _manifest(tmp_path)
    (tmp_path / "b.csv").unlink()
    code, _, err = _run(["verify", "--manifest", path], capsys)
    assert code == 2 and "b.csv" in err


def test_metrics_byte_identical(tmp_path, capsys):
    path = _manifest(tmp_path, pairs=True)
    _run(["metrics", "--manifest", path, "--out", tmp_path / "r1.json"], capsys)
    _run(["metrics", "--manifest", path, "--out", tmp_path / "r2.json"], capsys)
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_verify_bundle_json_pass(tmp_path, capsys):
    p = tmp_path / "row.json"
    p.write_text(json.dumps(TABLE2_ROW))
    code, out, _ = _run(["verify", "--bundle-json", p, "--paired", "--clustering"], capsys)
    assert code == 0 and json.loads(out)["verdict"] == "PASS"


def test_verify_bundle_json_raised_trust(tmp_path, capsys):
    p = tmp_path / "row.json"
    p.write_text(json.dumps(TABLE2_ROW))
    code, out, _ = _run(["verify", "--bundle-json", p, "--paired", "--clustering", "--tau-t", "0.99"], capsys)
    doc = json.loads(out)
    assert code == 1 and doc["failure_mode"] == "LocalManifoldCollapse"
    assert doc["trigger"]["metric"] == "trust"


def test_verify_malformed_bundle(tmp_path, capsys):
    p = tmp_path / "row.json"
    p.write_text(json.dumps({"domains": ["a"], "w2": "oops", "trust": {"a": "high"}}))
    code, _, _ = _run(["verify", "--bundle-json", p], capsys)
    assert code == 2
    p.write_text("{not json")
    assert _run(["verify", "--bundle-json", p], capsys)[0] == 2


def test_verify_separated_domains_fail(tmp_path, capsys):
    code, out, _ = _run(["verify", "--manifest", _manifest(tmp_path, offset=50.0)], capsys)
    doc = json.loads(out)
    assert code == 1
    assert doc["failure_mode"] in ("GeometricMisalignment", "StructuralFragmentation")


def test_verify_paired_manifest(tmp_path, capsys):
    code, out, _ = _run(["verify", "--manifest", _manifest(tmp_path, pairs=True), "--metric", "euclidean"], capsys)
    doc = json.loads(out)
    assert "alignment" in doc["metrics"] and doc["flags"]["has_paired_modalities"] is True
    assert code in (0, 1)


def test_module_entry_point(tmp_path):
    p = tmp_path / "row.json"
    p.write_text(json.dumps(TABLE2_ROW))
    proc = subprocess.run([sys.executable, "-m", "ulhm", "verify", "--bundle-json", str(p)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["verdict"] == "PASS"


QUICK = ["--classes", "4", "--per-class", "10", "--obs-dim", "6", "--hidden", "8", "--seed", "5"]


def test_train_zero_epochs_is_init(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = _run(["train", "--out", out, "--epochs", "0", "--stage2-epochs", "0", "--stage3-epochs", "0", *QUICK],
                      capsys)
    assert code == 0
    run = pipeline.load_run(out)
    dms = run.models.domain_models
    skel = transfer_skeleton(run.config, [d.tag for d in dms], [6, 6], 4, [d.scaler for d in dms])
    assert {k: n.digest() for k, n in run.networks().items()} == {k: n.digest() for k, n in skel.networks().items()}


def test_train_repeat_identical_and_summary(tmp_path, capsys):
    for name in ("r1", "r2"):
        _run(["train", "--out", tmp_path / name, "--epochs", "3", "--stage2-epochs", "3", *QUICK], capsys)
    files = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes(), rel
    summary = json.loads((tmp_path / "r1" / "summary.json").read_text())
    stages = {k.split("/")[0] for k in summary["final_losses"]}
    assert stages == {"stage1", "stage2", "stage3"}
    for losses in summary["final_losses"].values():
        assert {"recon_x", "recon_s", "consist", "local", "contrastive", "centroid", "ce", "total"} <= set(losses)


def test_train_divergence_exit_4(tmp_path, capsys):
    with np.errstate(all="ignore"):
        code, _, err = _run(["train", "--out", tmp_path / "run", "--lr", "1e300", "--lambda-l", "1e300", *QUICK],
                            capsys)
    assert code == 4 and "diverged" in err


def test_train_needs_out(capsys):
    assert _run(["train", *QUICK], capsys)[0] == 2


@pytest.mark.parametrize("task", ["transfer", "zeroshot", "recover"])
def test_eval_reports(tmp_path, capsys, task):
    run_dir = tmp_path / "run"
    args = ["--classes", "6", "--per-class", "10", "--obs-dim", "6", "--hidden", "8", "--epochs", "3",
            "--stage2-epochs", "3"]
    assert _run(["train", "--task", task, "--out", run_dir, *args], capsys)[0] == 0
    code, out, _ = _run(["eval", task, "--run", run_dir], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["task"] == task
    if task == "recover":
        assert list(rep["mse_by_rho"]) == ["0.25", "0.5", "0.75", "1.0"]
        assert rep["mse_by_rho"]["1.0"] == rep["autoencode_mse"]
    elif task == "transfer":
        assert set(rep["accuracy"]) == {"domain1->domain2", "domain2->domain1"}
        assert rep["verification"]["verdict"] in ("PASS", "FAIL")
    else:
        assert rep["unseen"] == [4, 5] and rep["seen"] == [0, 1, 2, 3]
        for tag in ("domain1", "domain2"):
            assert sorted(rep["per_class"][tag]) == [str(c) for c in range(6)]


def test_eval_export_latents_roundtrip(tmp_path, capsys):
    run_dir = tmp_path / "run"
    _run(["train", "--out", run_dir, "--epochs", "3", "--stage2-epochs", "3", *QUICK], capsys)
    code, _, _ = _run(["eval", "transfer", "--run", run_dir, "--export-latents", tmp_path / "lat"], capsys)
    assert code == 0
    code, out, _ = _run(["verify", "--manifest", tmp_path / "lat" / "manifest.json"], capsys)
    assert code in (0, 1) and json.loads(out)["flags"]["requires_clustering"] is True


def test_eval_missing_run(tmp_path, capsys):
    code, _, err = _run(["eval", "recover", "--run", tmp_path / "ghost"], capsys)
    assert code == 2 and "ghost" in err
