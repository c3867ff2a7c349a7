"""Network checkpoints: raw little-endian float64 parameter blob plus a JSON sidecar."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError, IoError
from .network import Network, NetworkSpec, init_network


def save_network(net: Network, path, meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>.bin`` and ``<path>.json``; returns both paths."""
    stem = Path(path)
    blob, side = stem.with_name(stem.name + ".bin"), stem.with_name(stem.name + ".json")
    sidecar = {
        "spec": net.spec.to_dict(),
        "n_params": int(net.flat().size),
        "sha256": net.digest(),
        **(meta or {}),
    }
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        blob.write_bytes(net.flat().astype("<f8").tobytes())
        side.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {stem}: {exc}") from exc
    return blob, side


def load_network(path) -> tuple[Network, dict]:
    stem = Path(path)
    blob, side = stem.with_name(stem.name + ".bin"), stem.with_name(stem.name + ".json")
    try:
        sidecar = json.loads(side.read_text(encoding="utf-8"))
        raw = blob.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {stem}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{side}: bad sidecar JSON ({exc})") from exc
    s = sidecar["spec"]
    net = init_network(NetworkSpec(tuple(s["layer_sizes"]), s["activation"], s["seed"]))
    vec = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if vec.size != sidecar["n_params"]:
        raise FormatError(f"{blob}: expected {sidecar['n_params']} parameters, found {vec.size}")
    net.set_flat(vec)
    return net, sidecar
