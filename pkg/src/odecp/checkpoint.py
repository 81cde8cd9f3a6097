"""Binary checkpoints: versioned header plus named float64 parameter blocks.

Layout (all integers little-endian):

    magic   8 bytes  b"OCPCKPT1"
    u32     header JSON length
    bytes   header JSON: format version, model config, prior, epoch,
            normalization metadata
    u32     block count
    per block:
        u16   name length, then UTF-8 name
        u8    ndim, then ndim x u32 dims
        f64   row-major data, little-endian
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .data import NormInfo
from .model import ModelConfig, OdeCpModel, PriorHyper

MAGIC = b"OCPCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


def _norm_to_json(norm: NormInfo | None):
    if norm is None:
        return None
    return {
        "index_lo": norm.index_lo.tolist(),
        "index_hi": norm.index_hi.tolist(),
        "time_lo": norm.time_lo,
        "time_hi": norm.time_hi,
    }


def _norm_from_json(obj) -> NormInfo | None:
    if obj is None:
        return None
    return NormInfo(np.asarray(obj["index_lo"], dtype=np.float64),
                    np.asarray(obj["index_hi"], dtype=np.float64),
                    float(obj["time_lo"]), float(obj["time_hi"]))


def save_checkpoint(path, model: OdeCpModel, epoch: int = 0,
                    norm: NormInfo | None = None) -> None:
    cfg = model.config
    header = {
        "format": FORMAT_VERSION,
        "config": {
            "n_modes": cfg.n_modes,
            "rank": cfg.rank,
            "state_dim": cfg.state_dim,
            "fourier_dim": cfg.fourier_dim,
            "encoder_hidden": list(cfg.encoder_hidden),
            "dynamics_hidden": list(cfg.dynamics_hidden),
            "decoder_hidden": list(cfg.decoder_hidden),
            "seed": cfg.seed,
        },
        "prior": {
            "a0": model.prior.a0.tolist(),
            "b0": model.prior.b0.tolist(),
            "c0": model.prior.c0,
            "d0": model.prior.d0,
        },
        "epoch": int(epoch),
        "norm": _norm_to_json(norm),
    }
    blob = json.dumps(header).encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[OdeCpModel, int, NormInfo | None]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format {header.get('format')}")
        cfg = header["config"]
        config = ModelConfig(
            n_modes=cfg["n_modes"], rank=cfg["rank"], state_dim=cfg["state_dim"],
            fourier_dim=cfg["fourier_dim"],
            encoder_hidden=tuple(cfg["encoder_hidden"]),
            dynamics_hidden=tuple(cfg["dynamics_hidden"]),
            decoder_hidden=tuple(cfg["decoder_hidden"]), seed=cfg["seed"],
        )
        pr = header["prior"]
        prior = PriorHyper(np.asarray(pr["a0"]), np.asarray(pr["b0"]),
                           float(pr["c0"]), float(pr["d0"]))
        model = OdeCpModel(config, prior=prior)

        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(dims)) if ndim else 1
            raw = fh.read(8 * n_items)
            if len(raw) != 8 * n_items:
                raise CheckpointError(f"{path}: truncated block {name}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, int(header["epoch"]), _norm_from_json(header["norm"])
