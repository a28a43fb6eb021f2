"""Binary training checkpoints.

One file: magic, a little-endian uint32 format version, a length-prefixed
JSON header (iteration counter, config hash plus the resolved config, RNG
states, z-filter states, array directory), then the raw float64 little-endian
parameter arrays in directory order. Loading refuses any other version and
any truncated or inconsistent file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .nets import MlpSpec

MAGIC = b"MKCP"
VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or incompatible checkpoint file."""


def _spec_to_json(spec: MlpSpec) -> dict:
    return {"input_dim": spec.input_dim, "hidden_dims": list(spec.hidden_dims),
            "output_dim": spec.output_dim, "head": spec.head}


def _spec_from_json(data: dict) -> MlpSpec:
    return MlpSpec(int(data["input_dim"]), tuple(data["hidden_dims"]),
                   int(data["output_dim"]), head=str(data["head"]))


@dataclass
class Checkpoint:
    kind: str                                  # "expert" | "gail"
    iteration: int
    config: dict                               # resolved experiment config
    config_hash: str
    rng_states: dict[str, dict]                # name -> bit-generator state
    filters: dict[str, dict | None]            # name -> ZFilter state or None
    policy_spec: MlpSpec = None
    policy_params: np.ndarray = None
    value_spec: MlpSpec = None
    value_params: np.ndarray = None
    value_out_mean: float = 0.0
    value_out_scale: float = 1.0
    disc_spec: MlpSpec | None = None
    disc_params: np.ndarray | None = None
    disc_adam_m: np.ndarray | None = None
    disc_adam_v: np.ndarray | None = None
    disc_adam_t: int = 0
    disc_mask: str | None = None
    disc_context_k: int = 0


def save_checkpoint(cp: Checkpoint, path: str) -> None:
    arrays: list[tuple[str, np.ndarray]] = [
        ("policy_params", cp.policy_params),
        ("value_params", cp.value_params),
    ]
    if cp.disc_params is not None:
        arrays += [("disc_params", cp.disc_params), ("disc_adam_m", cp.disc_adam_m),
                   ("disc_adam_v", cp.disc_adam_v)]
    header = {
        "kind": cp.kind,
        "iteration": cp.iteration,
        "config": cp.config,
        "config_hash": cp.config_hash,
        "rng_states": cp.rng_states,
        "filters": cp.filters,
        "policy_spec": _spec_to_json(cp.policy_spec),
        "value_spec": _spec_to_json(cp.value_spec),
        "value_out_mean": cp.value_out_mean,
        "value_out_scale": cp.value_out_scale,
        "disc_spec": _spec_to_json(cp.disc_spec) if cp.disc_spec is not None else None,
        "disc_adam_t": cp.disc_adam_t,
        "disc_mask": cp.disc_mask,
        "disc_context_k": cp.disc_context_k,
        "arrays": [{"name": name, "count": int(arr.size)} for name, arr in arrays],
    }
    blob = json.dumps(header).encode()
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<I", VERSION)
    payload += struct.pack("<Q", len(blob))
    payload += blob
    for _name, arr in arrays:
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (this build "
                              f"reads version {VERSION})")
    blob_len = struct.unpack_from("<Q", data, 8)[0]
    offset = 16
    if offset + blob_len > len(data):
        raise CheckpointError(f"{path} is truncated (header)")
    header = json.loads(data[offset:offset + blob_len].decode())
    offset += blob_len

    blocks = {}
    for entry in header["arrays"]:
        count = int(entry["count"])
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path} is truncated (array {entry['name']})")
        blocks[entry["name"]] = np.frombuffer(data[offset:offset + nbytes], dtype="<f8").copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path} has {len(data) - offset} trailing bytes")

    disc_spec = header.get("disc_spec")
    return Checkpoint(
        kind=header["kind"],
        iteration=int(header["iteration"]),
        config=header["config"],
        config_hash=header["config_hash"],
        rng_states=header["rng_states"],
        filters=header["filters"],
        policy_spec=_spec_from_json(header["policy_spec"]),
        policy_params=blocks["policy_params"],
        value_spec=_spec_from_json(header["value_spec"]),
        value_params=blocks["value_params"],
        value_out_mean=float(header["value_out_mean"]),
        value_out_scale=float(header["value_out_scale"]),
        disc_spec=_spec_from_json(disc_spec) if disc_spec is not None else None,
        disc_params=blocks.get("disc_params"),
        disc_adam_m=blocks.get("disc_adam_m"),
        disc_adam_v=blocks.get("disc_adam_v"),
        disc_adam_t=int(header.get("disc_adam_t", 0)),
        disc_mask=header.get("disc_mask"),
        disc_context_k=int(header.get("disc_context_k", 0)),
    )
