"""Run directories: train a task, persist it, reload it, evaluate it.

A run directory holds ``run.json`` (task, resolved config, data source,
per-domain scalers and dimensions), one checkpoint pair per network under
``checkpoints/``, ``loss_history.csv`` and ``summary.json``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import apps
from .errors import ConfigError, DataError, FormatError, IoError
from .store import DatasetBundle, EmbeddingSet, load_manifest, save_embeddings
from .toy.checkpoint import load_network, save_network
from .toy.synthetic import SyntheticSpec, gen_synthetic
from .toy.training import (
    DEFAULT_RHO_TRAIN,
    Scaler,
    TrainConfig,
    recovery_skeleton,
    train,
    train_recovery,
    train_zeroshot,
    transfer_skeleton,
    write_history,
    zeroshot_skeleton,
)

SCHEMA_VERSION = 1
DEFAULT_UNSEEN = (4, 5)
DEFAULT_RHOS = (0.25, 0.5, 0.75, 1.0)


def dump_json(doc: dict, path) -> None:
    """Deterministic UTF-8 JSON (insertion order kept, floats via repr)."""
    text = json.dumps(doc, indent=2, ensure_ascii=False, allow_nan=True) + "\n"
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise IoError(f"no such file: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{p}: invalid JSON ({exc})") from None


# --------------------------------------------------------------------------- data


@dataclass(frozen=True)
class DataSource:
    """Either a synthetic suite or a manifest of labelled observation files."""

    synthetic: SyntheticSpec | None = None
    manifest: str | None = None

    def to_dict(self) -> dict:
        if self.manifest is not None:
            return {"manifest": self.manifest}
        return {"synthetic": self.synthetic.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        if "manifest" in d:
            return cls(manifest=d["manifest"])
        return cls(synthetic=SyntheticSpec(**d["synthetic"]))

    def load(self, split: str) -> list[DatasetBundle]:
        if self.manifest is None:
            return gen_synthetic(self.synthetic, split)
        return bundles_from_manifest(self.manifest)


def bundles_from_manifest(path) -> list[DatasetBundle]:
    """Each domain's embeddings are treated as observations; labels are required."""
    man = load_manifest(path)
    missing = [d.domain_tag for d in man.domains if d.labels is None]
    if missing:
        raise DataError(f"{path}: training/evaluation needs labels for domains {missing}")
    n_classes = max(int(d.labels.max()) for d in man.domains) + 1
    return [
        DatasetBundle(
            observations=d.points,
            labels=d.labels,
            semantics=np.eye(n_classes)[d.labels],
            domain_tag=d.domain_tag,
            n_classes=n_classes,
        )
        for d in man.domains
    ]


# --------------------------------------------------------------------------- runs


@dataclass(eq=False)
class Run:
    task: str
    config: TrainConfig
    source: DataSource
    models: object  # TrainResult | list[ZeroShotModel] | list[RecoveryModel]
    meta: dict

    def networks(self) -> dict:
        if self.task == "transfer":
            return self.models.networks()
        out = {}
        for m in self.models:
            out.update(m.networks())
        return out

    def history(self) -> list[dict]:
        if self.task == "transfer":
            return self.models.history
        return [row for m in self.models for row in m.history]


def _scaler_doc(sc: Scaler) -> dict:
    return {"mean": sc.mean.tolist(), "std": sc.std.tolist()}


def _scaler(doc: dict) -> Scaler:
    return Scaler(np.array(doc["mean"], dtype=np.float64), np.array(doc["std"], dtype=np.float64))


def train_run(task: str, cfg: TrainConfig, source: DataSource, unseen=DEFAULT_UNSEEN,
              rho_train=DEFAULT_RHO_TRAIN) -> Run:
    data = source.load("train")
    n_classes = max(b.n_classes for b in data)
    domains = [{"tag": b.domain_tag, "obs_dim": int(b.observations.shape[1])} for b in data]
    meta = {"n_classes": n_classes, "domains": domains}
    if task == "transfer":
        models = train(cfg, data)
        scalers = [dm.scaler for dm in models.domain_models]
    elif task == "zeroshot":
        models = [train_zeroshot(cfg, b, tuple(unseen)) for b in data]
        scalers = [m.domain.scaler for m in models]
        meta["seen"] = list(models[0].seen)
        meta["unseen"] = list(models[0].unseen)
    elif task == "recover":
        models = [train_recovery(cfg, b, tuple(rho_train)) for b in data]
        scalers = [m.scaler for m in models]
        meta["rho_train"] = list(models[0].rho_train)
    else:
        raise ConfigError(f"unknown task {task!r}")
    for dom, sc in zip(domains, scalers):
        dom["scaler"] = _scaler_doc(sc)
    return Run(task, cfg, source, models, meta)


def _stage_of(name: str) -> str:
    return name.split("/", 1)[0]


def save_run(run: Run, out_dir) -> dict:
    """Write the run directory; returns the summary document."""
    out = Path(out_dir)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "task": run.task,
        "config": run.config.to_dict(),
        "data": run.source.to_dict(),
        **run.meta,
    }
    dump_json(doc, out / "run.json")
    ckpts = {}
    for name, net in run.networks().items():
        save_network(net, out / "checkpoints" / name, {"name": name, "stage": _stage_of(name),
                                                       "config_seed": run.config.seed})
        ckpts[name] = net.digest()
    write_history(run.history(), out / "loss_history.csv")
    last: dict[str, dict] = {}
    for row in run.history():
        last[f"stage{row['stage']}/{row['part']}"] = {k: v for k, v in row.items() if k not in ("stage", "part")}
    summary = {
        "schema_version": SCHEMA_VERSION,
        "task": run.task,
        "epochs_run": {k: v["epoch"] + 1 for k, v in last.items()},
        "final_losses": last,
        "checkpoints": ckpts,
        "config": doc["config"],
        "data": doc["data"],
    }
    dump_json(summary, out / "summary.json")
    return summary


def load_run(run_dir) -> Run:
    run_dir = Path(run_dir)
    doc = read_json(run_dir / "run.json")
    try:
        task = doc["task"]
        cfg = TrainConfig.from_dict(doc["config"])
        source = DataSource.from_dict(doc["data"])
        doms = doc["domains"]
        n_classes = int(doc["n_classes"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{run_dir}/run.json: missing or malformed field ({exc})") from None
    tags = [d["tag"] for d in doms]
    dims = [int(d["obs_dim"]) for d in doms]
    scalers = [_scaler(d["scaler"]) for d in doms]
    if task == "transfer":
        models = transfer_skeleton(cfg, tags, dims, n_classes, scalers)
    elif task == "zeroshot":
        models = [zeroshot_skeleton(cfg, t, D, n_classes, doc["unseen"], sc) for t, D, sc in zip(tags, dims, scalers)]
    elif task == "recover":
        models = [recovery_skeleton(cfg, t, D, n_classes, sc, doc["rho_train"]) for t, D, sc in zip(tags, dims, scalers)]
    else:
        raise FormatError(f"{run_dir}/run.json: unknown task {task!r}")
    meta = {k: v for k, v in doc.items() if k not in ("schema_version", "task", "config", "data")}
    run = Run(task, cfg, source, models, meta)
    for name, net in run.networks().items():
        loaded, _ = load_network(run_dir / "checkpoints" / name)
        if loaded.spec.layer_sizes != net.spec.layer_sizes:
            raise FormatError(f"checkpoint {name}: layer sizes {loaded.spec.layer_sizes} != {net.spec.layer_sizes}")
        net.set_flat(loaded.flat())
    return run


# --------------------------------------------------------------------------- evaluation


def _report(task: str, run: Run, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "task": task, **body,
            "config": run.config.to_dict(), "data": run.source.to_dict()}


def eval_transfer(run: Run, test: list[DatasetBundle]) -> dict:
    res = run.models
    accuracy, per_class, directions = {}, {}, []
    for src in sorted(res.classifiers):
        for tgt in range(len(test)):
            if tgt == src:
                continue
            rep = apps.transfer_eval(res, test, src, tgt)
            d = rep["transfer_direction"]
            directions.append(d)
            accuracy[d] = rep["accuracy"]
            per_class[d] = rep["per_class"]
    source_acc = {test[s].domain_tag: apps.transfer_eval(res, test, s, s)["accuracy"] for s in sorted(res.classifiers)}
    return _report("transfer", run, {
        "accuracy": accuracy,
        "per_class": per_class,
        "transfer_direction": directions,
        "source_accuracy": source_acc,
    })


def eval_zeroshot(run: Run, train_data: list[DatasetBundle], test: list[DatasetBundle]) -> dict:
    split = apps.ZeroShotSplit(run.meta["seen"], run.meta["unseen"])
    domains, per_class = {}, {}
    for m, tr, te in zip(run.models, train_data, test):
        zsl = apps.zeroshot_eval(m.encode, tr, te, split, "zsl")
        gzsl = apps.zeroshot_eval(m.encode, tr, te, split, "gzsl")
        every = apps.zeroshot_all_classes(m.encode, tr, te, split)
        domains[te.domain_tag] = {"zsl": zsl["accuracy"], "gzsl": gzsl["accuracy"],
                                  "per_class_zsl": zsl["per_class"]}
        per_class[te.domain_tag] = every["per_class"]
    zsl_mean = float(np.mean([d["zsl"] for d in domains.values()]))
    gzsl_mean = float(np.mean([d["gzsl"] for d in domains.values()]))
    return _report("zeroshot", run, {
        "accuracy": zsl_mean,
        "accuracy_gzsl": gzsl_mean,
        "per_class": per_class,
        "seen": list(split.seen),
        "unseen": list(split.unseen),
        "domains": domains,
    })


def eval_recover(run: Run, test: list[DatasetBundle], rhos=DEFAULT_RHOS) -> dict:
    per_domain, sums, counts, ae = {}, {}, 0, []
    for m, te in zip(run.models, test):
        x = m.scaler(te.observations)
        rep = apps.recovery_eval(m.sparse_encoder, m.decoder, x, rhos, seed=run.config.seed)
        per_domain[te.domain_tag] = {"mse_by_rho": rep["mse_by_rho"], "autoencode_mse": rep["autoencode_mse"]}
        for key, err in apps.recovery_errors(m.sparse_encoder, m.decoder, x, rhos, run.config.seed).items():
            sums.setdefault(key, []).append(err)
        ae.append(((apps.autoencode(m.sparse_encoder, m.decoder, x) - x) ** 2).mean(axis=1))
        counts += x.shape[0]
    mse = {k: float(np.concatenate(v).mean()) for k, v in sums.items()}
    return _report("recover", run, {
        "accuracy": None,
        "per_class": {},
        "mse_by_rho": mse,
        "autoencode_mse": float(np.concatenate(ae).mean()),
        "n_samples": counts,
        "domains": per_domain,
    })


def export_latents(run: Run, test: list[DatasetBundle], out_dir) -> Path:
    """Write universal test latents plus observations and a manifest for ``verify``."""
    if run.task != "transfer":
        raise ConfigError("latent export needs a transfer run")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    entries = []
    for k, b in enumerate(test):
        z = EmbeddingSet(run.models.universal(k, b.observations), b.labels, b.domain_tag)
        save_embeddings(z, out / f"{b.domain_tag}_latent.csv", "csv")
        save_embeddings(EmbeddingSet(b.observations, None, b.domain_tag), out / f"{b.domain_tag}_input.csv", "csv")
        entries.append({"tag": b.domain_tag, "embeddings_path": f"{b.domain_tag}_latent.csv",
                        "input_path": f"{b.domain_tag}_input.csv"})
    manifest = out / "manifest.json"
    dump_json({"domains": entries, "flags": {"has_paired_modalities": False, "requires_clustering": True}}, manifest)
    return manifest


def evaluate(task: str, run: Run, test_source: DataSource | None = None, rhos=DEFAULT_RHOS) -> dict:
    if task != run.task:
        raise ConfigError(f"run was trained for {run.task!r}, cannot evaluate {task!r}")
    src = test_source or run.source
    test = src.load("test")
    if task == "transfer":
        return eval_transfer(run, test)
    if task == "zeroshot":
        return eval_zeroshot(run, run.source.load("train"), test)
    return eval_recover(run, test, rhos)
