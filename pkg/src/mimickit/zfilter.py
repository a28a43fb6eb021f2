"""Online input standardization with Welford running statistics."""

from __future__ import annotations

import numpy as np

EPS = 1e-8


class ZFilter:
    """Running mean/variance normalizer for network inputs (and rewards).

    ``update`` folds one observation into the running statistics (Welford
    form, population variance), ``apply`` normalizes without mutating, and
    ``update_apply`` is the online path used during rollout collection.
    Updates are strictly sequential, so a fixed stream order gives
    bit-reproducible statistics.
    """

    def __init__(self, dim: int, clip: float = 10.0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)
        self.clip = float(clip)
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    @property
    def var(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.dim)
        return self._m2 / self.count

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite input to ZFilter.update")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)

    def update_batch(self, rows) -> None:
        # Row-by-row on purpose: batch updates must match the sequential order.
        for row in np.asarray(rows, dtype=np.float64).reshape(-1, self.dim):
            self.update(row)

    def apply(self, x) -> np.ndarray:
        """Normalize with frozen statistics: (x - mean)/sqrt(var + eps), clipped."""
        x = np.asarray(x, dtype=np.float64)
        if self.count == 0:
            return np.clip(x, -self.clip, self.clip)
        z = (x - self.mean) / np.sqrt(self.var + EPS)
        return np.clip(z, -self.clip, self.clip)

    def update_apply(self, x) -> np.ndarray:
        # Fused update-then-normalize; the rollout hot path.
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (x - self.mean)
        z = (x - self.mean) / np.sqrt(self._m2 / self.count + EPS)
        return np.clip(z, -self.clip, self.clip)

    def merge(self, other: "ZFilter") -> None:
        """Fold another filter's statistics in (parallel Welford combine)."""
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean.copy()
            self._m2 = other._m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self._m2 = self._m2 + other._m2 + delta * delta * (self.count * other.count / total)
        self.count = total

    def copy(self) -> "ZFilter":
        out = ZFilter(self.dim, self.clip)
        out.count = self.count
        out.mean = self.mean.copy()
        out._m2 = self._m2.copy()
        return out

    def state_dict(self) -> dict:
        return {
            "dim": self.dim,
            "clip": self.clip,
            "count": self.count,
            "mean": self.mean.tolist(),
            "m2": self._m2.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "ZFilter":
        out = cls(int(state["dim"]), float(state["clip"]))
        out.count = int(state["count"])
        out.mean = np.asarray(state["mean"], dtype=np.float64)
        out._m2 = np.asarray(state["m2"], dtype=np.float64)
        return out
