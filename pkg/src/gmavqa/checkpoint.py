"""Binary checkpoint container.

Layout: ``b"GMA1"``, a little-endian u64 manifest length, the UTF-8 JSON
manifest (config, epoch, optimizer scalars, and name/shape/dtype of every
array in storage order), then the raw little-endian array bytes.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_from_dict
from .model import GmaNet
from .optim import AdamaxState

MAGIC = b"GMA1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    cfg: RunConfig
    net: GmaNet
    opt_state: AdamaxState | None
    epoch: int


def _arrays(net: GmaNet, opt_state: AdamaxState | None) -> list[tuple[str, np.ndarray]]:
    named = net.named_parameters()
    out = [(f"param/{n}", t.data) for n, t in named]
    if opt_state is not None and opt_state.m:
        out += [(f"adamax.m/{n}", m) for (n, _), m in zip(named, opt_state.m)]
        out += [(f"adamax.u/{n}", u) for (n, _), u in zip(named, opt_state.u)]
    return out


def save_checkpoint(path: str | Path, net: GmaNet, cfg: RunConfig, opt_state: AdamaxState | None = None,
                    epoch: int = 0) -> None:
    arrays = _arrays(net, opt_state)
    manifest = {
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "epoch": epoch,
        "optimizer": None if opt_state is None else {
            "lr": opt_state.lr, "beta1": opt_state.beta1, "beta2": opt_state.beta2,
            "eps": opt_state.eps, "t": opt_state.t,
        },
        "tensors": [{"name": n, "shape": list(a.shape), "dtype": a.dtype.str.lstrip("<>=|")} for n, a in arrays],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())
    os.replace(tmp, path)


def read_manifest(path: str | Path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a GMA checkpoint (bad magic {raw[:4]!r})")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[4:12])
    if len(raw) < 12 + n:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    return manifest, raw[12 + n :]


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None) -> Checkpoint:
    """Load and validate; nothing is built unless every array checks out.

    When ``cfg`` is given, parameter shapes must match a network built
    from it; otherwise the stored config is used.
    """
    manifest, payload = read_manifest(path)
    stored_cfg = config_from_dict(manifest["config"], base=RunConfig())
    cfg = cfg or stored_cfg
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["tensors"]:
        dt = np.dtype(entry["dtype"]).newbyteorder("<")
        count = int(np.prod(entry["shape"]))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated data at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(payload, dt, count, offset).reshape(entry["shape"]).astype(dt.newbyteorder("="))
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")

    net = GmaNet.init(cfg)
    named = net.named_parameters()
    for name, t in named:
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[key].shape != t.shape:
            raise CheckpointError(f"{path}: parameter {name} has shape {arrays[key].shape}, config expects {t.shape}")
    extra = {k for k in arrays if k.startswith("param/")} - {f"param/{n}" for n, _ in named}
    if extra:
        raise CheckpointError(f"{path}: unexpected parameters {sorted(extra)[:3]}")

    opt_state = None
    if manifest.get("optimizer") is not None:
        o = manifest["optimizer"]
        opt_state = AdamaxState(lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"], t=o["t"])
        if o["t"] > 0:
            opt_state.m = [arrays[f"adamax.m/{n}"].copy() for n, _ in named]
            opt_state.u = [arrays[f"adamax.u/{n}"].copy() for n, _ in named]
    for name, t in named:
        t.data = arrays[f"param/{name}"].astype(t.data.dtype).copy()
    return Checkpoint(cfg, net, opt_state, int(manifest["epoch"]))
