"""The common demonstration format shared by policy logging and mocap ingestion.

A DemoSet on disk is a directory holding ``meta.json`` (format version,
feature layout, timestep, context alphabet, provenance, row count and a
content hash of the data file) and ``data.csv`` (header row of feature names
plus ``context``; one row per timestep; floats printed with 17 significant
digits so the round trip is lossless).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
META_NAME = "meta.json"
DATA_NAME = "data.csv"


class DemoFormatError(ValueError):
    """Malformed, truncated or incompatible DemoSet directory."""


@dataclass
class DemoSet:
    feature_names: list[str]
    dt: float
    rows: np.ndarray            # (T, F) float64
    contexts: np.ndarray        # (T,) int64 in [0, context_k)
    context_k: int = 1
    source: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(self.feature_names))
        self.contexts = np.asarray(self.contexts, dtype=np.int64).reshape(-1)
        if self.rows.shape[0] != self.contexts.shape[0]:
            raise ValueError("rows and contexts disagree on length")
        if self.context_k < 1:
            raise ValueError("context_k must be >= 1")
        if self.size and (self.contexts.min() < 0 or self.contexts.max() >= self.context_k):
            raise ValueError("context labels must lie in [0, context_k)")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other) -> bool:
        return (isinstance(other, DemoSet)
                and self.feature_names == other.feature_names
                and self.dt == other.dt
                and self.context_k == other.context_k
                and self.source == other.source
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.contexts, other.contexts))


def _render_csv(demos: DemoSet) -> str:
    lines = [",".join(demos.feature_names + ["context"])]
    for row, c in zip(demos.rows, demos.contexts):
        lines.append(",".join(f"{v:.17g}" for v in row) + f",{int(c)}")
    return "\n".join(lines) + "\n"


def write_demoset(demos: DemoSet, path: str) -> None:
    """Write a DemoSet directory; data first, meta (with hash) last."""
    os.makedirs(path, exist_ok=True)
    data = _render_csv(demos).encode()
    meta = {
        "format_version": FORMAT_VERSION,
        "feature_names": list(demos.feature_names),
        "dt": demos.dt,
        "context_k": demos.context_k,
        "source": demos.source,
        "n_rows": demos.size,
        "data_sha256": hashlib.sha256(data).hexdigest(),
    }
    _atomic_write(os.path.join(path, DATA_NAME), data)
    _atomic_write(os.path.join(path, META_NAME), json.dumps(meta, indent=2).encode())


def read_demoset(path: str) -> DemoSet:
    meta_path = os.path.join(path, META_NAME)
    data_path = os.path.join(path, DATA_NAME)
    if not os.path.isfile(meta_path) or not os.path.isfile(data_path):
        raise DemoFormatError(f"{path} is not a DemoSet directory (missing meta.json or data.csv)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DemoFormatError(f"unsupported DemoSet format version {version!r} (this build reads {FORMAT_VERSION})")
    with open(data_path, "rb") as fh:
        data = fh.read()
    if hashlib.sha256(data).hexdigest() != meta["data_sha256"]:
        raise DemoFormatError(f"{data_path} is truncated or corrupt (content hash mismatch)")

    names = list(meta["feature_names"])
    lines = data.decode().splitlines()
    if not lines:
        raise DemoFormatError(f"{data_path} has no header row")
    header = lines[0].split(",")
    if header != names + ["context"]:
        raise DemoFormatError(f"data header {header} disagrees with meta layout {names + ['context']}")
    body = [ln for ln in lines[1:] if ln]
    if len(body) != int(meta["n_rows"]):
        raise DemoFormatError(f"expected {meta['n_rows']} rows, found {len(body)}")

    width = len(names)
    rows = np.empty((len(body), width))
    contexts = np.empty(len(body), dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != width + 1:
            raise DemoFormatError(f"row {i + 1} has {len(parts)} fields, expected {width + 1}")
        rows[i] = [float(p) for p in parts[:width]]
        contexts[i] = int(parts[width])
    return DemoSet(feature_names=names, dt=float(meta["dt"]), rows=rows, contexts=contexts,
                   context_k=int(meta["context_k"]), source=str(meta.get("source", "")))


def _atomic_write(path: str, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
