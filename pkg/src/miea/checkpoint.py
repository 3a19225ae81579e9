"""Versioned checkpoint archives for codecs and inverse networks.

A checkpoint is a zip archive with a fixed timestamp holding ``header.json``
(format tag, version, kind, config, seed) and one ``.npy`` member per
parameter tensor. Writing the same parameters twice gives identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

FORMAT = "miea-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _member(zf: zipfile.ZipFile, name: str, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def write(path, kind: str, header: dict, state: "OrderedDict[str, torch.Tensor]") -> None:
    doc = {"format": FORMAT, "version": VERSION, "kind": kind, **header,
           "params": list(state.keys())}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _member(zf, "header.json", json.dumps(doc, sort_keys=True, indent=1).encode())
        for i, (name, tensor) in enumerate(state.items()):
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _member(zf, f"param_{i:04d}.npy", buf.getvalue())
    tmp.replace(path)


def read(path, kind: str) -> tuple:
    """Return ``(header, state_dict)``; raises CheckpointError on a foreign file."""
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    with zf:
        try:
            header = json.loads(zf.read("header.json"))
        except KeyError:
            raise CheckpointError(f"{path}: missing header") from None
        if header.get("format") != FORMAT or header.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported format {header.get('format')!r} v{header.get('version')}")
        if header.get("kind") != kind:
            raise CheckpointError(f"{path}: holds a {header.get('kind')!r}, expected {kind!r}")
        state = OrderedDict()
        for i, name in enumerate(header["params"]):
            arr = np.load(io.BytesIO(zf.read(f"param_{i:04d}.npy")), allow_pickle=False)
            state[name] = torch.from_numpy(arr)
    return header, state


def save_codec(codec, path) -> None:
    write(path, "codec", {"config": codec.config.to_dict(), "seed": codec.seed,
                          "train_snr_db": codec.config.train_snr_db},
          codec.net.state_dict())


def load_codec(path):
    from .codec import CodecConfig, CodecNet, TrainedCodec

    header, state = read(path, "codec")
    config = CodecConfig.from_dict(header["config"])
    net = CodecNet(config)
    net.load_state_dict(state)
    return TrainedCodec(net, config, header["seed"])


def save_inverse_net(net, path) -> None:
    write(path, "inverse_net", {"config": net.config.to_dict(), "seed": net.seed},
          net.module.state_dict())


def load_inverse_net(path):
    from .attack import InverseNet, InverseNetConfig, InverseNetwork

    header, state = read(path, "inverse_net")
    config = InverseNetConfig.from_dict(header["config"])
    module = InverseNetwork(config)
    module.load_state_dict(state)
    return InverseNet(module, config, header["seed"])
