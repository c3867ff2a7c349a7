"""Training schedules for the toy models.

``train`` runs the three-stage transfer protocol:

1. per-domain ULHM pretraining of an observation encoder/decoder pair plus a
   label encoder/decoder (categorical likelihood);
2. with stage-1 networks frozen, per-domain projections into a shared space,
   trained with reconstruction through the frozen decoders plus the
   cross-domain contrastive and centroid losses;
3. with everything else frozen, one classifier per source domain, each fitted
   on that domain only.

``train_zeroshot`` and ``train_recovery`` cover the other two applications.
All randomness flows from explicit seeds; full-batch runs are bit-reproducible.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TrainingDivergedError
from ..neighbors import knn, pairwise_distances
from ..store import DatasetBundle
from .losses import LossWeights, loss_centroid, loss_contrastive, loss_cross_entropy, loss_recon
from .model import Modality, ULHMBatch, ULHMModel, total_ulhm_loss
from .network import Network, NetworkSpec, backward, forward, init_network
from .optim import AdamState, adam_step
from .synthetic import MaskSpec, apply_mask

HISTORY_FIELDS = ("epoch", "stage", "part", "recon_x", "recon_s", "consist", "local",
                  "contrastive", "centroid", "ce", "total")


@dataclass(frozen=True)
class TrainConfig:
    latent_dim: int = 4
    hidden: int = 32
    activation: str = "tanh"
    epochs: int = 200
    stage2_epochs: int | None = 600
    stage3_epochs: int | None = None
    batch_size: int = 0  # 0 = full batch
    lr: float = 0.01
    weights: LossWeights = field(default_factory=LossWeights)
    kappa: int = 5
    seed: int = 42
    stages: tuple[int, ...] = (1, 2, 3)
    sources: tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if self.latent_dim < 1 or self.hidden < 1:
            raise ConfigError("latent_dim and hidden must be >= 1")
        if self.epochs < 0 or self.batch_size < 0 or not self.lr > 0:
            raise ConfigError("epochs/batch_size must be >= 0 and lr > 0")
        if not set(self.stages) <= {1, 2, 3}:
            raise ConfigError(f"stages must be drawn from 1, 2, 3; got {self.stages}")

    def epochs_for(self, stage: int) -> int:
        if stage == 2 and self.stage2_epochs is not None:
            return self.stage2_epochs
        if stage == 3 and self.stage3_epochs is not None:
            return self.stage3_epochs
        return self.epochs

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = list(self.stages)
        d["sources"] = list(self.sources)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        for key in ("stages", "sources"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


TASKS = ("transfer", "zeroshot", "recover")


def default_config(task: str, seed: int = 42, **overrides) -> TrainConfig:
    """Standard recipe per task; the zero-shot encoder gets a longer single stage."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    base = {"seed": seed}
    if task == "zeroshot":
        base["epochs"] = 400
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**base)


def derive_seed(seed: int, name: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % (2**63)


def make_net(cfg: TrainConfig, name: str, sizes: list[int]) -> Network:
    return init_network(NetworkSpec(tuple(sizes), cfg.activation, derive_seed(cfg.seed, name)))


@dataclass
class Scaler:
    """Per-feature standardization fitted on training observations."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def data_edges(x: np.ndarray, kappa: int) -> np.ndarray:
    """Directed kNN edges in data space (static for the whole run)."""
    k = min(kappa, x.shape[0] - 1)
    if k < 1:
        return np.empty((0, 2), dtype=np.int64)
    return knn(pairwise_distances(x, "euclidean"), k).edges()


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size == 0 or batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _check(value: float, stage: int) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss in stage {stage}")


def _row(epoch, stage, part, comp) -> dict:
    row = {k: 0.0 for k in HISTORY_FIELDS}
    row.update(epoch=epoch, stage=stage, part=part)
    for k, v in comp.items():
        if k in row:
            row[k] = float(v)
    return row


def _subset_edges(edges: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    pos = np.full(n, -1)
    pos[rows] = np.arange(rows.size)
    e = pos[edges]
    return e[(e >= 0).all(axis=1)]


# --------------------------------------------------------------------------- stage 1


@dataclass(eq=False)
class DomainModel:
    """Stage-1 networks of one domain."""

    tag: str
    scaler: Scaler
    model: ULHMModel

    @property
    def encoder(self) -> Network:
        return self.model.modality("obs").encoder

    @property
    def decoder(self) -> Network:
        return self.model.modality("obs").decoder

    def encode(self, observations: np.ndarray) -> np.ndarray:
        return forward(self.encoder, self.scaler(observations)).output


def build_domain_model(cfg: TrainConfig, tag: str, obs_dim: int, n_classes: int, scaler: Scaler) -> DomainModel:
    h, d = cfg.hidden, cfg.latent_dim
    obs = Modality(
        "obs",
        make_net(cfg, f"{tag}/enc", [obs_dim, h, h, d]),
        make_net(cfg, f"{tag}/dec", [d, h, h, obs_dim]),
    )
    lab = Modality(
        "label",
        make_net(cfg, f"{tag}/sem_enc", [n_classes, h, d]),
        make_net(cfg, f"{tag}/sem_dec", [d, h, n_classes]),
        likelihood="categorical",
        semantic=True,
    )
    return DomainModel(tag, scaler, ULHMModel([obs, lab]))


def _fit_ulhm(model: ULHMModel, make_batch, n: int, epochs: int, cfg: TrainConfig, stage: int, part: str,
              history: list, extra_step=None) -> None:
    """Adam over every network in ``model`` (plus any ``extra_step`` networks)."""
    rng = np.random.default_rng(derive_seed(cfg.seed, f"batches/{part}"))
    nets = model.networks()
    extra_nets = extra_step.networks if extra_step is not None else []
    state = AdamState()
    for epoch in range(epochs):
        comp_sum: dict[str, float] = {}
        for rows in _batches(n, cfg.batch_size, rng):
            for net in nets + extra_nets:
                net.zero_grad()
            batch = make_batch(rows, epoch)
            value, comp = total_ulhm_loss(model, batch, cfg.weights)
            if extra_step is not None:
                ev, ecomp = extra_step(rows)
                value += ev
                comp = {**comp, **ecomp, "total": comp["total"] + ev}
            _check(value, stage)
            adam_step(nets + extra_nets, state, cfg.lr)
            for k, v in comp.items():
                comp_sum[k] = comp_sum.get(k, 0.0) + v
        history.append(_row(epoch, stage, part, comp_sum))


def pretrain_domain(cfg: TrainConfig, bundle: DatasetBundle, history: list, dm: DomainModel | None = None
                    ) -> DomainModel:
    """Stage 1 for one domain; trains ``dm`` in place (a fresh one if None)."""
    if dm is None:
        dm = build_domain_model(cfg, bundle.domain_tag, bundle.observations.shape[1], bundle.n_classes,
                                Scaler.fit(bundle.observations))
    x = dm.scaler(bundle.observations)
    onehot = np.eye(dm.model.modality("label").encoder.n_in)[bundle.labels]
    edges = data_edges(x, cfg.kappa)

    def make_batch(rows, epoch):
        return ULHMBatch(
            inputs=[x[rows], onehot[rows]],
            targets=[x[rows], bundle.labels[rows]],
            edges=[_subset_edges(edges, rows, x.shape[0]), None],
        )

    _fit_ulhm(dm.model, make_batch, x.shape[0], cfg.epochs_for(1), cfg, 1, bundle.domain_tag, history)
    return dm


# --------------------------------------------------------------------------- stage 2


def universal_latents(dm: DomainModel, projection: Network, observations: np.ndarray) -> np.ndarray:
    return forward(projection, dm.encode(observations)).output


def train_projections(cfg: TrainConfig, domain_models: list[DomainModel], bundles: list[DatasetBundle],
                      history: list, projections: list[Network]) -> list[Network]:
    """Stage 2: only ``projections`` are updated; stage-1 networks just pass gradients."""
    latents = [dm.encode(b.observations) for dm, b in zip(domain_models, bundles)]
    targets = [dm.scaler(b.observations) for dm, b in zip(domain_models, bundles)]
    labels = np.concatenate([b.labels for b in bundles])
    dom_ids = np.concatenate([np.full(b.n, k) for k, b in enumerate(bundles)])
    offsets = np.cumsum([0] + [b.n for b in bundles])
    w = cfg.weights
    state = AdamState()
    rng = np.random.default_rng(derive_seed(cfg.seed, "batches/stage2"))
    for epoch in range(cfg.epochs_for(2)):
        comp = {"recon_x": 0.0, "contrastive": 0.0, "centroid": 0.0}
        # per-domain minibatches drawn in lockstep
        per_dom = [_batches(b.n, cfg.batch_size, rng) for b in bundles]
        for step in range(max(len(p) for p in per_dom)):
            for p in projections:
                p.zero_grad()
            sel = [p[step % len(p)] for p in per_dom]
            acts, zs, recon = [], [], 0.0
            dz_list = []
            for k, rows in enumerate(sel):
                a = forward(projections[k], latents[k][rows])
                acts.append(a)
                zs.append(a.output)
                dec = domain_models[k].decoder
                da = forward(dec, a.output)
                v, g = loss_recon(da.output, targets[k][rows])
                recon += v
                dz_list.append(backward(dec, da, g, accumulate=False))
            z_all = np.vstack(zs)
            lab = np.concatenate([labels[offsets[k] + rows] for k, rows in enumerate(sel)])
            dom = np.concatenate([dom_ids[offsets[k] + rows] for k, rows in enumerate(sel)])
            total = recon
            g_all = np.zeros_like(z_all)
            if w.lambda_cont > 0:
                v, g = loss_contrastive(z_all, lab, dom, w.temperature)
                comp["contrastive"] += v
                total += w.lambda_cont * v
                g_all += w.lambda_cont * g
            if w.lambda_cent > 0:
                v, g = loss_centroid(z_all, lab, dom)
                comp["centroid"] += v
                total += w.lambda_cent * v
                g_all += w.lambda_cent * g
            _check(total, 2)
            start = 0
            for k, a in enumerate(acts):
                stop = start + a.output.shape[0]
                backward(projections[k], a, dz_list[k] + g_all[start:stop])
                start = stop
            adam_step(projections, state, cfg.lr)
            comp["recon_x"] += recon
            comp["total"] = comp.get("total", 0.0) + total
        history.append(_row(epoch, 2, "projections", comp))
    return projections


# --------------------------------------------------------------------------- stage 3


def train_classifier(cfg: TrainConfig, z: np.ndarray, labels: np.ndarray, clf: Network, history: list,
                     name: str = "classifier", stage: int = 3) -> Network:
    """Stage 3: fit ``clf`` on fixed latents ``z``."""
    state = AdamState()
    rng = np.random.default_rng(derive_seed(cfg.seed, f"batches/{name}"))
    for epoch in range(cfg.epochs_for(stage)):
        total = 0.0
        for rows in _batches(z.shape[0], cfg.batch_size, rng):
            clf.zero_grad()
            a = forward(clf, z[rows])
            v, g = loss_cross_entropy(a.output, labels[rows])
            _check(v, stage)
            backward(clf, a, g)
            adam_step(clf, state, cfg.lr)
            total += v
        history.append(_row(epoch, stage, name, {"ce": total, "total": total}))
    return clf


@dataclass(eq=False)
class TrainResult:
    config: TrainConfig
    domain_models: list[DomainModel]
    projections: list[Network]
    classifiers: dict[int, Network]
    history: list[dict]
    n_classes: int

    def networks(self) -> dict[str, Network]:
        out = {}
        for dm in self.domain_models:
            for mod in dm.model.modalities:
                out[f"stage1/{dm.tag}_{mod.name}_encoder"] = mod.encoder
                out[f"stage1/{dm.tag}_{mod.name}_decoder"] = mod.decoder
        for dm, p in zip(self.domain_models, self.projections):
            out[f"stage2/{dm.tag}_projection"] = p
        for src, c in sorted(self.classifiers.items()):
            out[f"stage3/classifier_src{src}"] = c
        return out

    def universal(self, k: int, observations: np.ndarray) -> np.ndarray:
        return universal_latents(self.domain_models[k], self.projections[k], observations)


def transfer_skeleton(cfg: TrainConfig, tags: list[str], obs_dims: list[int], n_classes: int,
                      scalers: list[Scaler]) -> TrainResult:
    """Freshly initialized networks for every stage (what 0 epochs leaves behind)."""
    h, d = cfg.hidden, cfg.latent_dim
    dms = [build_domain_model(cfg, t, D, n_classes, sc) for t, D, sc in zip(tags, obs_dims, scalers)]
    projections = [make_net(cfg, f"{t}/proj", [d, h, d]) for t in tags]
    for src in cfg.sources:
        if not 0 <= src < len(tags):
            raise ConfigError(f"source domain {src} out of range")
    classifiers = {src: make_net(cfg, f"classifier_src{src}", [d, h, n_classes]) for src in cfg.sources}
    return TrainResult(cfg, dms, projections, classifiers, [], n_classes)


def train(cfg: TrainConfig, data: list[DatasetBundle]) -> TrainResult:
    """Three-stage transfer protocol over the training bundles of every domain.

    Stages not listed in ``cfg.stages`` keep their freshly initialized networks.
    """
    if not data:
        raise ConfigError("no training data")
    n_classes = max(b.n_classes for b in data)
    res = transfer_skeleton(cfg, [b.domain_tag for b in data], [b.observations.shape[1] for b in data],
                            n_classes, [Scaler.fit(b.observations) for b in data])
    history = res.history
    if 1 in cfg.stages:
        for dm, b in zip(res.domain_models, data):
            pretrain_domain(cfg, b, history, dm)
    if 2 in cfg.stages:
        train_projections(cfg, res.domain_models, data, history, res.projections)
    if 3 in cfg.stages:
        for src, clf in res.classifiers.items():
            z = res.universal(src, data[src].observations)
            train_classifier(cfg, z, data[src].labels, clf, history, f"classifier_src{src}")
    return res


# --------------------------------------------------------------------------- zero-shot


@dataclass(eq=False)
class ZeroShotModel:
    config: TrainConfig
    domain: DomainModel
    classifier: Network
    seen: tuple[int, ...]
    unseen: tuple[int, ...]
    history: list[dict]

    def encode(self, observations: np.ndarray) -> np.ndarray:
        return self.domain.encode(observations)

    def networks(self) -> dict[str, Network]:
        tag = self.domain.tag
        out = {}
        for mod in self.domain.model.modalities:
            out[f"zeroshot/{tag}_{mod.name}_encoder"] = mod.encoder
            out[f"zeroshot/{tag}_{mod.name}_decoder"] = mod.decoder
        out[f"zeroshot/{tag}_classifier"] = self.classifier
        return out


def zeroshot_skeleton(cfg: TrainConfig, tag: str, obs_dim: int, n_classes: int, unseen, scaler: Scaler
                      ) -> ZeroShotModel:
    unseen = tuple(sorted(int(c) for c in unseen))
    seen = tuple(c for c in range(n_classes) if c not in unseen)
    if not seen or not unseen or any(not 0 <= c < n_classes for c in unseen):
        raise ConfigError(f"zero-shot split needs seen and unseen classes within [0, {n_classes})")
    dm = build_domain_model(cfg, f"zs/{tag}", obs_dim, n_classes, scaler)
    dm.tag = tag
    clf = make_net(cfg, f"zs/{tag}/classifier", [cfg.latent_dim, cfg.hidden, len(seen)])
    return ZeroShotModel(cfg, dm, clf, seen, unseen, [])


class _AuxClassifier:
    """Seen-class cross-entropy on observation latents, backpropagated into the encoder."""

    def __init__(self, clf: Network, encoder: Network, x: np.ndarray, labels: np.ndarray, seen_mask: np.ndarray):
        self.clf, self.encoder = clf, encoder
        self.x, self.labels, self.seen_mask = x, labels, seen_mask
        self.networks = [clf]

    def __call__(self, rows):
        rows = rows[self.seen_mask[rows]]
        if rows.size == 0:
            return 0.0, {"ce": 0.0}
        ea = forward(self.encoder, self.x[rows])
        ca = forward(self.clf, ea.output)
        v, g = loss_cross_entropy(ca.output, self.labels[rows])
        dz = backward(self.clf, ca, g)
        backward(self.encoder, ea, dz)
        return v, {"ce": v}


def train_zeroshot(cfg: TrainConfig, bundle: DatasetBundle, unseen: tuple[int, ...]) -> ZeroShotModel:
    """Seen rows get the full objective; unseen rows only reconstruction and locality.

    The label modality is absent for unseen rows, so their labels never enter
    training.  An auxiliary classifier over the seen classes shares the encoder.
    """
    zs = zeroshot_skeleton(cfg, bundle.domain_tag, bundle.observations.shape[1], bundle.n_classes, unseen,
                           Scaler.fit(bundle.observations))
    dm = zs.domain
    x = dm.scaler(bundle.observations)
    seen_mask = np.isin(bundle.labels, zs.seen)
    onehot = np.eye(bundle.n_classes)[bundle.labels] * seen_mask[:, None]
    edges = data_edges(x, cfg.kappa)
    remap = {c: i for i, c in enumerate(zs.seen)}
    seen_labels = np.array([remap.get(int(c), 0) for c in bundle.labels])
    aux = _AuxClassifier(zs.classifier, dm.encoder, x, seen_labels, seen_mask)

    def make_batch(rows, epoch):
        return ULHMBatch(
            inputs=[x[rows], onehot[rows]],
            targets=[x[rows], bundle.labels[rows]],
            present=[None, seen_mask[rows]],
            edges=[_subset_edges(edges, rows, x.shape[0]), None],
        )

    _fit_ulhm(dm.model, make_batch, x.shape[0], cfg.epochs_for(1), cfg, 1, f"zeroshot/{bundle.domain_tag}",
              zs.history, extra_step=aux)
    return zs


# --------------------------------------------------------------------------- sparse recovery


@dataclass(eq=False)
class RecoveryModel:
    config: TrainConfig
    tag: str
    scaler: Scaler
    model: ULHMModel
    rho_train: tuple[float, ...]
    history: list[dict]

    @property
    def sparse_encoder(self) -> Network:
        return self.model.modality("sparse").encoder

    @property
    def decoder(self) -> Network:
        return self.model.modality("full").decoder

    def networks(self) -> dict[str, Network]:
        t = self.tag
        return {
            f"recover/{t}_full_encoder": self.model.modality("full").encoder,
            f"recover/{t}_sparse_encoder": self.sparse_encoder,
            f"recover/{t}_decoder": self.decoder,
            f"recover/{t}_label_encoder": self.model.modality("label").encoder,
            f"recover/{t}_label_decoder": self.model.modality("label").decoder,
        }


DEFAULT_RHO_TRAIN = (0.25, 0.5, 0.75, 1.0)


def recovery_skeleton(cfg: TrainConfig, tag: str, obs_dim: int, n_classes: int, scaler: Scaler,
                      rho_train=DEFAULT_RHO_TRAIN) -> RecoveryModel:
    h, d = cfg.hidden, cfg.latent_dim
    decoder = make_net(cfg, f"rec/{tag}/dec", [d, h, h, obs_dim])
    model = ULHMModel([
        Modality("full", make_net(cfg, f"rec/{tag}/enc_full", [obs_dim, h, h, d]), decoder),
        Modality("sparse", make_net(cfg, f"rec/{tag}/enc_sparse", [2 * obs_dim, h, h, d]), decoder),
        Modality("label", make_net(cfg, f"rec/{tag}/sem_enc", [n_classes, h, d]),
                 make_net(cfg, f"rec/{tag}/sem_dec", [d, h, n_classes]), likelihood="categorical", semantic=True),
    ])
    return RecoveryModel(cfg, tag, scaler, model, tuple(float(r) for r in rho_train), [])


def _mixed_masks(n: int, d: int, rhos: tuple[float, ...], seed: int) -> np.ndarray:
    """Row i gets density rhos[i % len(rhos)]; positions drawn per seed."""
    mask = np.zeros((n, d))
    for j, rho in enumerate(rhos):
        rows = np.arange(j, n, len(rhos))
        if rows.size:
            mask[rows] = apply_mask(np.ones((rows.size, d)), MaskSpec(rho, derive_seed(seed, f"mask/{j}")))[1]
    return mask


def train_recovery(cfg: TrainConfig, bundle: DatasetBundle, rho_train: tuple[float, ...] = DEFAULT_RHO_TRAIN
                   ) -> RecoveryModel:
    """Full, sparse and label modalities sharing one latent space.

    The sparse encoder reads ``[masked values, mask]`` and its latents are
    decoded by the full-observation decoder, which is how recovery is run.
    Masks are redrawn every epoch with densities cycling through ``rho_train``.
    """
    rm = recovery_skeleton(cfg, bundle.domain_tag, bundle.observations.shape[1], bundle.n_classes,
                           Scaler.fit(bundle.observations), rho_train)
    x = rm.scaler(bundle.observations)
    n, dim = x.shape
    onehot = np.eye(bundle.n_classes)[bundle.labels]
    edges = data_edges(x, cfg.kappa)
    masks: dict[int, np.ndarray] = {}

    def make_batch(rows, epoch):
        if epoch not in masks:
            masks.clear()
            masks[epoch] = _mixed_masks(n, dim, rm.rho_train, derive_seed(cfg.seed, f"epoch/{epoch}"))
        m = masks[epoch][rows]
        sub = _subset_edges(edges, rows, n)
        return ULHMBatch(
            inputs=[x[rows], np.hstack([x[rows] * m, m]), onehot[rows]],
            targets=[x[rows], x[rows], bundle.labels[rows]],
            edges=[sub, sub, None],
        )

    _fit_ulhm(rm.model, make_batch, n, cfg.epochs_for(1), cfg, 1, f"recover/{bundle.domain_tag}", rm.history)
    return rm


def write_history(history: list[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
