"""Versioned, byte-deterministic checkpoints.

File layout::

    RDSEG-CKPT\\n
    <header length in bytes, decimal>\\n
    <header: UTF-8 JSON, sorted keys>\\n
    <payload: concatenated little-endian tensors>

The header holds the format version, both configs, the optimizer scalars,
the training rng state, the loss history, a manifest of
``(name, shape, dtype, offset, nbytes)`` entries and a SHA-256 of the
payload. Network parameters are stored as float32; optimizer moments keep
their training dtype.
"""

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .denoiser import DenoiserConfig, DenoiserNetwork
from .errors import CorruptCheckpointError, ManifestError, UnsupportedVersionError
from .trainer import OptimizerState, TrainConfig, TrainingState, TrainReport

MAGIC = b"RDSEG-CKPT\n"
FORMAT_VERSION = 1


def _tensors(state):
    for name, p in state.net.named_parameters():
        yield f"param/{name}", np.ascontiguousarray(p, dtype="<f4")
    for name in state.opt.m:
        m = state.opt.m[name]
        yield f"adam_m/{name}", np.ascontiguousarray(m, dtype=m.dtype.newbyteorder("<"))
    for name in state.opt.v:
        v = state.opt.v[name]
        yield f"adam_v/{name}", np.ascontiguousarray(v, dtype=v.dtype.newbyteorder("<"))


def encode_checkpoint(state, train_cfg):
    manifest, chunks, offset = [], [], 0
    for name, arr in _tensors(state):
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                         "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": state.net.config.to_dict(),
        "train_config": train_cfg.to_dict(),
        "epoch": state.epoch,
        "optimizer": {"step": state.opt.step, "lr": state.opt.lr},
        "rng_state": state.rng.bit_generator.state,
        "report": state.report.to_dict(),
        "manifest": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + str(len(head)).encode() + b"\n" + head + b"\n" + payload


def save_checkpoint(state, train_cfg, path):
    """Write ``state`` atomically (temp file + rename)."""
    path = Path(path)
    data = encode_checkpoint(state, train_cfg)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def read_header(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return _split(data, path)[0]


def _split(data, path):
    if not data.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    rest = data[len(MAGIC):]
    try:
        nl = rest.index(b"\n")
        n = int(rest[:nl])
        header = json.loads(rest[nl + 1:nl + 1 + n])
    except (ValueError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = rest[nl + 1 + n + 1:]
    return header, payload


def load_checkpoint(path):
    """Return ``(state, model_cfg, train_cfg)`` reconstructed from ``path``."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, payload = _split(data, path)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint format version {version} is not supported "
                                      f"(this build reads version {FORMAT_VERSION})")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpointError(f"{path}: payload checksum mismatch")

    model_cfg = DenoiserConfig(**header["model_config"])
    train_cfg = TrainConfig(**header["train_config"])
    tensors = {}
    prev_end = 0
    for entry in header["manifest"]:
        if entry["offset"] < prev_end:
            raise ManifestError(f"{path}: manifest entries overlap or are out of order")
        prev_end = entry["offset"] + entry["nbytes"]
        if entry["name"] in tensors:
            raise ManifestError(f"{path}: tensor {entry['name']} listed twice")
        raw = payload[entry["offset"]:prev_end]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr

    net = DenoiserNetwork(model_cfg, rng=0)
    params = net.parameters()
    opt = OptimizerState({}, {}, header["optimizer"]["step"], header["optimizer"]["lr"])
    for name, p in params.items():
        for kind in ("param", "adam_m", "adam_v"):
            if f"{kind}/{name}" not in tensors:
                raise ManifestError(f"{path}: missing tensor {kind}/{name}")
        src = tensors.pop(f"param/{name}")
        if src.shape != p.shape:
            raise ManifestError(f"{path}: tensor {name} has shape {src.shape}, expected {p.shape}")
        p[...] = src
        opt.m[name] = tensors.pop(f"adam_m/{name}").astype(net.dtype)
        opt.v[name] = tensors.pop(f"adam_v/{name}").astype(net.dtype)
    if tensors:
        raise ManifestError(f"{path}: unexpected tensors {sorted(tensors)[:3]}")

    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    report = TrainReport(**header["report"])
    state = TrainingState(net, opt, rng, header["epoch"], report)
    return state, model_cfg, train_cfg
